#pragma once

// Structural equations for binary nodes:
//
//   W ~ Bernoulli(0.5);
//   A ~ Bernoulli(expit(-0.4 + 0.8*W));
//   Y ~ Bernoulli(expit(-1 + 1.0*A + 1.0*W - 0.5*A*W));
//   U ~ Bernoulli(0.3) latent;
//   N ~ Bernoulli(0.2) role=none;
//
// Nodes named A, Y and C default to treatment, outcome and censoring; every
// other node defaults to covariate.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "roadmap/common.hpp"
#include "roadmap/estimand.hpp"
#include "roadmap/graph.hpp"

namespace roadmap::dgp {

using graph::Role;

struct Term {
  double coefficient = 0;
  std::vector<std::size_t> factors;  // one or two earlier nodes
};

struct NodeDef {
  std::string name;
  Role role = Role::covariate;
  bool latent = false;
  std::optional<double> constant;  // Bernoulli(constant)
  double intercept = 0;
  std::vector<Term> terms;
};

class DGPSpec {
 public:
  DGPSpec() = default;
  explicit DGPSpec(std::vector<NodeDef> nodes) : nodes_(std::move(nodes)) { validate(); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<NodeDef>& nodes() const noexcept { return nodes_; }
  const NodeDef& node(std::size_t i) const { return nodes_.at(i); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].name == name) return i;
    return std::nullopt;
  }

  std::optional<std::size_t> find_role(Role r) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].role == r) return i;
    return std::nullopt;
  }

  std::size_t treatment() const { return *find_role(Role::treatment); }
  std::size_t outcome() const { return *find_role(Role::outcome); }
  std::optional<std::size_t> censoring() const { return find_role(Role::censoring); }

  // P(node = 1 | values of earlier nodes), with an optional shift of the
  // intercept on the logit scale.
  double probability(std::size_t i, const std::vector<double>& values, double shift = 0) const {
    const auto& n = nodes_[i];
    if (n.constant && shift == 0) return *n.constant;
    double eta = n.constant ? logit(*n.constant) : n.intercept;
    eta += shift;
    for (const auto& t : n.terms) {
      double v = t.coefficient;
      for (auto f : t.factors) v *= values[f];
      eta += v;
    }
    return expit(eta);
  }

  // Copy with node `i` replaced by Bernoulli(p).
  DGPSpec with_constant(std::size_t i, double p) const {
    auto nodes = nodes_;
    nodes.at(i).constant = p;
    nodes[i].terms.clear();
    nodes[i].intercept = 0;
    return DGPSpec(std::move(nodes));
  }

  // Non-latent nodes with role covariate, in definition order.
  std::vector<std::string> covariates() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
      if (n.role == Role::covariate && !n.latent) out.push_back(n.name);
    return out;
  }

 private:
  void validate() const {
    if (nodes_.empty()) throw DomainError("DGP defines no nodes");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      for (std::size_t j = 0; j < i; ++j)
        if (nodes_[j].name == n.name) throw DomainError("DGP node '" + n.name + "' is defined twice");
      if (n.constant && !(*n.constant > 0 && *n.constant < 1))
        throw DomainError("DGP node '" + n.name + "': probability must lie strictly between 0 and 1");
      if (!std::isfinite(n.intercept)) throw DomainError("DGP node '" + n.name + "': non-finite intercept");
      for (const auto& t : n.terms) {
        if (t.factors.empty() || t.factors.size() > 2)
          throw DomainError("DGP node '" + n.name + "': terms are a node or a product of two nodes");
        if (!std::isfinite(t.coefficient)) throw DomainError("DGP node '" + n.name + "': non-finite coefficient");
        for (auto f : t.factors)
          if (f >= i) throw DomainError("DGP node '" + n.name + "' refers to a later node");
      }
      if (n.latent && (n.role == Role::treatment || n.role == Role::outcome || n.role == Role::censoring))
        throw DomainError("DGP node '" + n.name + "': latent nodes cannot be treatment, outcome or censoring");
    }
    for (auto r : {Role::treatment, Role::outcome, Role::censoring}) {
      std::size_t count = 0;
      for (const auto& n : nodes_) count += n.role == r;
      if (count > 1) throw DomainError("DGP has more than one " + std::string(graph::to_string(r)) + " node");
      if (count == 0 && r != Role::censoring)
        throw DomainError("DGP has no " + std::string(graph::to_string(r)) + " node");
    }
  }

  std::vector<NodeDef> nodes_;
};

namespace detail {

class DgpParser {
 public:
  explicit DgpParser(std::string_view text) : s_(text) {}

  DGPSpec parse() {
    std::vector<NodeDef> nodes;
    for (;;) {
      skip();
      if (pos_ >= s_.size()) break;
      nodes.push_back(node(nodes));
    }
    return DGPSpec(std::move(nodes));
  }

 private:
  NodeDef node(const std::vector<NodeDef>& earlier) {
    NodeDef n;
    n.name = ident("node name");
    expect("~");
    auto dist = ident("distribution");
    if (dist != "Bernoulli") fail("unknown distribution '" + dist + "' (only Bernoulli is supported)");
    expect("(");
    skip();
    if (s_.compare(pos_, 5, "expit") == 0) {
      pos_ += 5;
      expect("(");
      n.intercept = number();
      for (;;) {
        skip();
        if (peek() != '+' && peek() != '-') break;
        double sign = peek() == '-' ? -1 : 1;
        ++pos_;
        Term t;
        t.coefficient = sign * number();
        expect("*");
        t.factors.push_back(reference(earlier, n.name));
        skip();
        if (peek() == '*') {
          ++pos_;
          t.factors.push_back(reference(earlier, n.name));
          skip();
          if (peek() == '*') fail("only pairwise products are supported");
        }
        n.terms.push_back(std::move(t));
      }
      expect(")");
    } else {
      auto [l, c] = here();
      double p = number();
      if (!(p > 0 && p < 1))
        throw ParseError("probability " + std::to_string(p) + " for node '" + n.name + "' is outside (0, 1)", l, c);
      n.constant = p;
    }
    expect(")");

    n.role = n.name == "A" ? Role::treatment : n.name == "Y" ? Role::outcome : n.name == "C" ? Role::censoring
                                                                                                 : Role::covariate;
    for (;;) {
      skip();
      if (peek() == ';' || pos_ >= s_.size()) break;
      auto [l, c] = here();
      auto word = ident("'role=', 'latent' or ';'");
      if (word == "latent") {
        n.latent = true;
      } else if (word == "role") {
        expect("=");
        auto [rl, rc] = here();
        auto r = ident("role");
        auto role = graph::role_from_string(r);
        if (!role) throw ParseError("unknown role '" + r + "'", rl, rc);
        n.role = *role;
      } else {
        throw ParseError("unexpected '" + word + "'", l, c);
      }
    }
    if (pos_ < s_.size()) expect(";");  // optional after the last equation
    if (n.latent && n.role != Role::covariate && n.role != Role::none)
      fail("latent node '" + n.name + "' cannot carry role " + std::string(graph::to_string(n.role)));
    return n;
  }

  std::size_t reference(const std::vector<NodeDef>& earlier, const std::string& self) {
    auto [l, c] = here();
    auto name = ident("node name");
    for (std::size_t i = 0; i < earlier.size(); ++i)
      if (earlier[i].name == name) return i;
    if (name == self) throw ParseError("node '" + self + "' refers to itself", l, c);
    throw ParseError("forward reference: '" + name + "' is not defined before '" + self + "'", l, c);
  }

  std::pair<std::size_t, std::size_t> here() const {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < pos_ && i < s_.size(); ++i) {
      if (s_[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    return {line, col};
  }

  [[noreturn]] void fail(const std::string& what) const {
    auto [l, c] = here();
    throw ParseError(what, l, c);
  }

  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  void skip() {
    while (pos_ < s_.size()) {
      char ch = s_[pos_];
      if (ch == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  void expect(std::string_view tok) {
    skip();
    if (s_.compare(pos_, tok.size(), tok) != 0) fail("expected '" + std::string(tok) + "'");
    pos_ += tok.size();
  }

  std::string ident(const char* what) {
    skip();
    std::size_t start = pos_;
    if (pos_ < s_.size() && (std::isalpha(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
      ++pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + what);
    return std::string(s_.substr(start, pos_ - start));
  }

  double number() {
    skip();
    std::size_t start = pos_;
    if (peek() == '+' || peek() == '-') ++pos_;
    while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                s_[pos_] == 'e' || s_[pos_] == 'E' ||
                                ((s_[pos_] == '-' || s_[pos_] == '+') && (s_[pos_ - 1] == 'e' || s_[pos_ - 1] == 'E'))))
      ++pos_;
    double v = 0;
    auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, v);
    if (ec != std::errc() || ptr != s_.data() + pos_ || pos_ == start) {
      pos_ = start;
      fail("expected a number");
    }
    return v;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline DGPSpec parse_dgp(std::string_view text) { return detail::DgpParser(text).parse(); }

// Checks node names, roles, latency and that every dependency is a graph edge.
inline void check_against(const DGPSpec& d, const graph::CausalGraph& g) {
  auto special = [](Role r) { return r == Role::treatment || r == Role::outcome || r == Role::censoring; };
  for (const auto& n : d.nodes()) {
    auto gi = g.index_of(n.name);
    if (!gi) throw DomainError("DGP node '" + n.name + "' is not in graph '" + g.name() + "'");
    const auto& gn = g.node(*gi);
    if (gn.latent != n.latent || ((special(gn.role) || special(n.role)) && gn.role != n.role))
      throw DomainError("DGP node '" + n.name + "' disagrees with graph '" + g.name() + "' on role or latency");
    for (const auto& t : n.terms)
      for (auto f : t.factors) {
        const auto& parents = g.parents(*gi);
        auto pi = *g.index_of(d.node(f).name);
        if (std::find(parents.begin(), parents.end(), pi) == parents.end())
          throw DomainError("DGP node '" + n.name + "' depends on '" + d.node(f).name + "' but graph '" +
                            g.name() + "' has no such edge");
      }
  }
  for (const auto& gn : g.nodes())
    if (!d.index_of(gn.id)) throw DomainError("graph node '" + gn.id + "' has no DGP equation");
}

// ---------------------------------------------------------------------------
// Truth oracle

struct Truth {
  double risk1 = 0;
  double risk0 = 0;
  double value = 0;     // on the requested contrast scale
  double mc_se = 0;     // zero for exact enumeration
  bool exact = true;
};

inline constexpr std::size_t kMaxEnumeratedNodes = 24;

namespace detail {

// Nodes the outcome equation depends on, directly or through earlier nodes.
inline std::vector<bool> outcome_ancestors(const DGPSpec& d) {
  std::vector<bool> need(d.size(), false);
  need[d.outcome()] = true;
  for (std::size_t i = d.size(); i-- > 0;)
    if (need[i])
      for (const auto& t : d.node(i).terms)
        for (auto f : t.factors) need[f] = true;
  return need;
}

inline double combine(estimand::Contrast c, double p1, double p0) {
  if (c == estimand::Contrast::risk_difference) return p1 - p0;
  if (!(p0 > 0)) throw DomainError("true risk ratio undefined: control-arm risk is zero");
  return p1 / p0;
}

inline double enumerate_risk(const DGPSpec& d, int a, const std::vector<std::size_t>& free,
                             const std::vector<bool>& need) {
  const auto A = d.treatment();
  const auto Y = d.outcome();
  const auto C = d.censoring();
  std::vector<double> v(d.size(), 0.0);
  double risk = 0;
  const std::uint64_t configs = std::uint64_t{1} << free.size();
  for (std::uint64_t mask = 0; mask < configs; ++mask) {
    for (std::size_t b = 0; b < free.size(); ++b) v[free[b]] = static_cast<double>(mask >> b & 1U);
    double weight = 1;
    for (std::size_t i = 0; i < Y; ++i) {
      if (!need[i]) continue;
      if (i == A) {
        v[i] = a;
      } else if (C && i == *C) {
        v[i] = 0;
      } else {
        double p = d.probability(i, v);
        weight *= v[i] == 1 ? p : 1 - p;
      }
    }
    risk += weight * d.probability(Y, v);
  }
  return risk;
}

}  // namespace detail

// Exact value of the causal estimand by enumeration under do(A=a, C=0).
inline Truth true_estimand(const DGPSpec& d, const estimand::CausalEstimand& ce) {
  ce.validate();
  const auto Y = d.outcome();
  if (d.node(Y).name != ce.outcome)
    throw DomainError("estimand outcome '" + ce.outcome + "' is not the DGP outcome '" + d.node(Y).name + "'");
  auto need = detail::outcome_ancestors(d);
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < Y; ++i)
    if (need[i] && i != d.treatment() && (!d.censoring() || i != *d.censoring())) free.push_back(i);
  if (free.size() > kMaxEnumeratedNodes)
    throw DomainError("exact enumeration over " + std::to_string(free.size()) + " nodes exceeds the limit of " +
                      std::to_string(kMaxEnumeratedNodes) + "; use the Monte Carlo truth (--mc-truth)");
  Truth t;
  t.risk1 = detail::enumerate_risk(d, ce.strategy1.treatment_level, free, need);
  t.risk0 = detail::enumerate_risk(d, ce.strategy0.treatment_level, free, need);
  t.value = detail::combine(ce.contrast, t.risk1, t.risk0);
  return t;
}

// Large-sample approximation by forward simulation under both interventions
// with shared draws; reports the Monte Carlo SE of the contrast.
inline Truth true_estimand_monte_carlo(const DGPSpec& d, const estimand::CausalEstimand& ce,
                                       std::uint64_t draws = 10'000'000, std::uint64_t seed = 1) {
  ce.validate();
  if (draws < 2) throw DomainError("Monte Carlo truth needs at least two draws");
  const auto A = d.treatment();
  const auto Y = d.outcome();
  const auto C = d.censoring();
  std::mt19937_64 rng(derive_seed(seed, 0x7a07));
  std::vector<double> v1(d.size()), v0(d.size());
  double s1 = 0, s0 = 0, s11 = 0, s00 = 0, s10 = 0;
  for (std::uint64_t k = 0; k < draws; ++k) {
    for (std::size_t i = 0; i < Y; ++i) {
      double u = unit_interval(rng());
      if (i == A) {
        v1[i] = ce.strategy1.treatment_level;
        v0[i] = ce.strategy0.treatment_level;
      } else if (C && i == *C) {
        v1[i] = v0[i] = 0;
      } else {
        v1[i] = u < d.probability(i, v1);
        v0[i] = u < d.probability(i, v0);
      }
    }
    double p1 = d.probability(Y, v1), p0 = d.probability(Y, v0);
    s1 += p1;
    s0 += p0;
    s11 += p1 * p1;
    s00 += p0 * p0;
    s10 += p1 * p0;
  }
  const double n = static_cast<double>(draws);
  Truth t;
  t.exact = false;
  t.risk1 = s1 / n;
  t.risk0 = s0 / n;
  t.value = detail::combine(ce.contrast, t.risk1, t.risk0);
  const double v11 = (s11 - s1 * s1 / n) / (n - 1);
  const double v00 = (s00 - s0 * s0 / n) / (n - 1);
  const double v10 = (s10 - s1 * s0 / n) / (n - 1);
  // Gradient of the contrast with respect to (risk1, risk0).
  double g1 = 1, g0 = -1;
  if (ce.contrast == estimand::Contrast::risk_ratio) {
    g1 = 1 / t.risk0;
    g0 = -t.risk1 / (t.risk0 * t.risk0);
  }
  t.mc_se = std::sqrt(std::max(g1 * g1 * v11 + g0 * g0 * v00 + 2 * g1 * g0 * v10, 0.0) / n);
  return t;
}

}  // namespace roadmap::dgp
