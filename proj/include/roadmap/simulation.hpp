#pragma once

// Outcome-blind Monte Carlo comparison of analytic designs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "roadmap/common.hpp"
#include "roadmap/dataset.hpp"
#include "roadmap/dgp.hpp"
#include "roadmap/estimation.hpp"

namespace roadmap::simulation {

using dgp::DGPSpec;
using estimation::EstimatorConfig;
using estimation::Method;

enum class DesignKind { rct, observational, hybrid };

inline std::string_view to_string(DesignKind k) {
  switch (k) {
    case DesignKind::rct: return "rct";
    case DesignKind::observational: return "observational";
    case DesignKind::hybrid: break;
  }
  return "hybrid";
}

inline std::optional<DesignKind> design_kind_from_string(std::string_view s) {
  if (s == "rct") return DesignKind::rct;
  if (s == "observational") return DesignKind::observational;
  if (s == "hybrid") return DesignKind::hybrid;
  return std::nullopt;
}

inline constexpr std::string_view kSourceColumn = "S";

struct DesignSpec {
  std::string name;
  DesignKind kind = DesignKind::rct;
  std::size_t n = 0;           // rct and observational
  std::size_t n_rct = 0;       // hybrid
  std::size_t n_external = 0;  // hybrid
  std::vector<double> deltas{0.0, 0.25, 0.5, 1.0};
  std::vector<Method> estimators{Method::tmle};
  double alpha = 0.05;
  std::optional<std::vector<std::string>> adjustment;  // default: DGP covariates

  static DesignSpec randomized(std::string name, std::size_t n) { return make(std::move(name), DesignKind::rct, n, 0, 0); }
  static DesignSpec observational(std::string name, std::size_t n) {
    return make(std::move(name), DesignKind::observational, n, 0, 0);
  }
  static DesignSpec hybrid(std::string name, std::size_t n_rct, std::size_t n_external) {
    return make(std::move(name), DesignKind::hybrid, 0, n_rct, n_external);
  }

  std::size_t total_n() const { return kind == DesignKind::hybrid ? n_rct + n_external : n; }

  // Outcome-intercept shifts evaluated for this design.
  std::vector<double> delta_grid() const { return kind == DesignKind::hybrid ? deltas : std::vector<double>{0.0}; }

  void validate() const {
    if (name.empty()) throw DomainError("design has no name");
    auto where = "design '" + name + "': ";
    if (kind == DesignKind::hybrid) {
      if (n_rct < 2 || n_external < 1) throw DomainError(where + "hybrid needs n_rct >= 2 and n_external >= 1");
      if (deltas.empty()) throw DomainError(where + "empty delta grid");
      for (double d : deltas)
        if (!std::isfinite(d)) throw DomainError(where + "non-finite delta");
      if (!std::is_sorted(deltas.begin(), deltas.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }))
        throw DomainError(where + "delta grid must be ordered by magnitude");
    } else if (n < 2) {
      throw DomainError(where + "sample size must be at least 2");
    }
    if (estimators.empty()) throw DomainError(where + "no estimators listed");
    if (alpha != 0.05) throw DomainError(where + "only alpha = 0.05 (95% intervals) is supported");
  }

 private:
  static DesignSpec make(std::string name, DesignKind kind, std::size_t n, std::size_t n_rct, std::size_t n_ext) {
    DesignSpec d;
    d.name = std::move(name);
    d.kind = kind;
    d.n = n;
    d.n_rct = n_rct;
    d.n_external = n_ext;
    return d;
  }
};

namespace detail {

inline constexpr std::uint64_t kTrialStream = 0x7121a1;
inline constexpr std::uint64_t kExternalStream = 0xe87e12;

// Draws `rows` records; `a_prob` overrides the treatment equation when set,
// `force_control` sets A=0. One uniform draw is consumed per node per row
// whatever the overrides, so designs share random numbers.
inline void draw_rows(const DGPSpec& g, std::size_t rows, std::mt19937_64& rng, std::optional<double> a_prob,
                      bool force_control, double outcome_shift, std::vector<std::vector<double>>& out) {
  const auto A = g.treatment();
  const auto Y = g.outcome();
  std::vector<double> v(g.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double u = unit_interval(rng());
      double p;
      if (i == A && force_control) p = 0;
      else if (i == A && a_prob) p = *a_prob;
      else p = g.probability(i, v, i == Y ? outcome_shift : 0.0);
      v[i] = u < p ? 1.0 : 0.0;
    }
    for (std::size_t i = 0; i < g.size(); ++i) out[i].push_back(v[i]);
  }
}

}  // namespace detail

inline data::Schema schema_for(const DGPSpec& g, const DesignSpec& design) {
  data::Schema s;
  s.treatment = g.node(g.treatment()).name;
  s.outcome = g.node(g.outcome()).name;
  if (auto c = g.censoring()) s.censoring = g.node(*c).name;
  s.required = design.adjustment ? *design.adjustment : g.covariates();
  return s;
}

// Replication `rep` of `design` under `g`. Trial and external rows use
// separate streams derived from (seed, rep), so the trial part of a hybrid
// design equals the rct design of the same size for every delta.
inline data::Dataset simulate_dataset(const DGPSpec& g, const DesignSpec& design, std::uint64_t rep,
                                      std::uint64_t seed, double delta = 0.0) {
  design.validate();
  std::vector<std::vector<double>> cols(g.size());
  std::mt19937_64 trial(derive_seed(seed, detail::kTrialStream, rep));
  const bool randomized = design.kind != DesignKind::observational;
  const std::size_t n_trial = design.kind == DesignKind::hybrid ? design.n_rct : design.n;
  detail::draw_rows(g, n_trial, trial, randomized ? std::optional<double>(0.5) : std::nullopt, false, 0.0, cols);
  std::vector<double> source;
  if (design.kind == DesignKind::hybrid) {
    std::mt19937_64 ext(derive_seed(seed, detail::kExternalStream, rep));
    detail::draw_rows(g, design.n_external, ext, std::nullopt, true, delta, cols);
    source.assign(design.n_rct, 0.0);
    source.resize(design.n_rct + design.n_external, 1.0);
  }

  const auto Y = g.outcome();
  if (auto c = g.censoring())
    for (std::size_t r = 0; r < cols[Y].size(); ++r)
      if (cols[*c][r] == 1) cols[Y][r] = data::kMissing;

  std::vector<std::string> names;
  std::vector<std::vector<double>> kept;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.node(i).latent) continue;
    if (!source.empty() && g.node(i).name == kSourceColumn)
      throw DomainError("DGP node name '" + std::string(kSourceColumn) + "' clashes with the hybrid source column");
    names.push_back(g.node(i).name);
    kept.push_back(std::move(cols[i]));
  }
  if (!source.empty()) {
    names.emplace_back(kSourceColumn);
    kept.push_back(std::move(source));
  }
  return data::Dataset(std::move(names), std::move(kept), schema_for(g, design));
}

// ---------------------------------------------------------------------------
// Evaluation

struct SimulationOptions {
  std::size_t replications = 1000;
  std::uint64_t seed = 1;
  EstimatorConfig estimator;
  unsigned threads = 1;  // 0 = hardware concurrency
};

struct Metric {
  double value = 0;
  double mc_se = 0;
};

struct CellMetrics {
  std::string design;
  DesignKind kind = DesignKind::rct;
  Method estimator = Method::tmle;
  double delta = 0;
  std::size_t replications = 0;
  std::size_t failures_null = 0;
  std::size_t failures_alt = 0;
  bool valid = true;
  double mean_estimate = 0;
  Metric bias;
  Metric variance;
  Metric coverage;
  Metric type_one;
  Metric power;
  double mean_n = 0;
};

struct HybridSummary {
  std::string design;
  Method estimator = Method::tmle;
  double worst_type_one = 0;
  double worst_mc_se = 0;
  double worst_delta = 0;
  bool nondecreasing = true;
  double mean_total_n = 0;
};

struct SimulationReport {
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  dgp::Truth truth_null;
  dgp::Truth truth_alt;
  std::vector<CellMetrics> cells;
  std::vector<HybridSummary> hybrid;

  const CellMetrics& cell(std::string_view design, Method m, double delta = 0) const {
    for (const auto& c : cells)
      if (c.design == design && c.estimator == m && c.delta == delta) return c;
    throw DomainError("no simulation cell for design '" + std::string(design) + "'");
  }
};

namespace detail {

struct Draw {
  bool ok = false;
  double point = 0;
  bool covers = false;
  bool rejects = false;
};

inline Metric proportion(std::size_t hits, std::size_t n) {
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double p = static_cast<double>(hits) / static_cast<double>(n);
  return {p, std::sqrt(p * (1 - p) / static_cast<double>(n))};
}

template <typename Fn>
void for_each_replication(std::size_t m, unsigned threads, Fn fn) {
  if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, m));
  if (threads <= 1) {
    for (std::size_t r = 0; r < m; ++r) fn(r);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t r = next++; r < m; r = next++) fn(r);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

inline SimulationReport evaluate(const DGPSpec& null_dgp, const DGPSpec& alt_dgp,
                                 const std::vector<DesignSpec>& designs, const SimulationOptions& opt,
                                 const estimand::CausalEstimand& ce) {
  if (opt.replications < 100) throw DomainError("at least 100 replications are required");
  if (designs.empty()) throw DomainError("no designs to evaluate");
  if (ce.contrast != estimand::Contrast::risk_difference)
    throw DomainError("design comparison is defined on the risk-difference scale");
  opt.estimator.validate();
  for (std::size_t i = 0; i < designs.size(); ++i) {
    designs[i].validate();
    for (std::size_t j = 0; j < i; ++j)
      if (designs[j].name == designs[i].name) throw DomainError("duplicate design name '" + designs[i].name + "'");
  }

  SimulationReport rep;
  rep.replications = opt.replications;
  rep.seed = opt.seed;
  rep.truth_null = dgp::true_estimand(null_dgp, ce);
  rep.truth_alt = dgp::true_estimand(alt_dgp, ce);
  const std::size_t M = opt.replications;

  for (const auto& design : designs) {
    auto adjust = schema_for(alt_dgp, design).required;
    const std::size_t E = design.estimators.size();
    for (double delta : design.delta_grid()) {
      // draws[(r * E + e) * 2 + k], k = 0 null, 1 alt
      std::vector<detail::Draw> draws(M * E * 2);
      detail::for_each_replication(M, opt.threads, [&](std::size_t r) {
        const DGPSpec* dgps[2] = {&null_dgp, &alt_dgp};
        const double truths[2] = {rep.truth_null.value, rep.truth_alt.value};
        auto cfg = opt.estimator;
        cfg.super_learner.seed = derive_seed(opt.seed, 0x5ee1, r);
        for (int k = 0; k < 2; ++k) {
          std::optional<data::Dataset> d;
          try {
            d = simulate_dataset(*dgps[k], design, r, opt.seed, delta);
          } catch (const Error&) {
            continue;
          }
          const auto& s = d->schema();
          estimand::StatisticalEstimand se{adjust, ce.contrast, s.treatment, s.outcome, s.censoring};
          for (std::size_t e = 0; e < E; ++e) {
            auto& out = draws[(r * E + e) * 2 + static_cast<std::size_t>(k)];
            try {
              auto res = estimation::estimate(*d, se, design.estimators[e], cfg);
              out.ok = std::isfinite(res.point) && std::isfinite(res.ci95.lo) && std::isfinite(res.ci95.hi);
              out.point = res.point;
              out.covers = res.ci95.contains(truths[k]);
              out.rejects = !res.ci95.contains(0.0);
            } catch (const Error&) {
              out.ok = false;
            }
          }
        }
      });

      for (std::size_t e = 0; e < E; ++e) {
        CellMetrics c;
        c.design = design.name;
        c.kind = design.kind;
        c.estimator = design.estimators[e];
        c.delta = delta;
        c.replications = M;
        c.mean_n = static_cast<double>(design.total_n());
        std::size_t ok_null = 0, ok_alt = 0, rej_null = 0, rej_alt = 0, cover = 0;
        double sum = 0, sumsq = 0;
        for (std::size_t r = 0; r < M; ++r) {
          const auto& dn = draws[(r * E + e) * 2];
          const auto& da = draws[(r * E + e) * 2 + 1];
          if (dn.ok) {
            ++ok_null;
            rej_null += dn.rejects;
          }
          if (da.ok) {
            ++ok_alt;
            rej_alt += da.rejects;
            cover += da.covers;
            sum += da.point;
            sumsq += da.point * da.point;
          }
        }
        c.failures_null = M - ok_null;
        c.failures_alt = M - ok_alt;
        c.valid = c.failures_null * 20 <= M && c.failures_alt * 20 <= M;
        if (ok_alt >= 2) {
          const double k = static_cast<double>(ok_alt);
          c.mean_estimate = sum / k;
          const double var = std::max(0.0, (sumsq - sum * sum / k) / (k - 1));
          c.bias = {c.mean_estimate - rep.truth_alt.value, std::sqrt(var / k)};
          c.variance = {var, var * std::sqrt(2.0 / (k - 1))};
        } else {
          c.mean_estimate = std::numeric_limits<double>::quiet_NaN();
          c.bias = c.variance = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
        }
        c.coverage = detail::proportion(cover, ok_alt);
        c.power = detail::proportion(rej_alt, ok_alt);
        c.type_one = detail::proportion(rej_null, ok_null);
        rep.cells.push_back(std::move(c));
      }
    }

    if (design.kind == DesignKind::hybrid) {
      for (auto m : design.estimators) {
        HybridSummary h;
        h.design = design.name;
        h.estimator = m;
        h.mean_total_n = static_cast<double>(design.total_n());
        double prev = -1;
        bool first = true;
        for (double delta : design.deltas) {
          const auto& c = rep.cell(design.name, m, delta);
          if (first || c.type_one.value > h.worst_type_one) {
            h.worst_type_one = c.type_one.value;
            h.worst_mc_se = c.type_one.mc_se;
            h.worst_delta = delta;
          }
          if (!first && c.type_one.value < prev) h.nondecreasing = false;
          prev = c.type_one.value;
          first = false;
        }
        rep.hybrid.push_back(h);
      }
    }
  }
  return rep;
}

}  // namespace roadmap::simulation
