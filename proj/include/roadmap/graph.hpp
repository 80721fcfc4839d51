#pragma once

// Causal DAGs: the text DSL, structural validation, d-separation and
// backdoor/censoring adjustment-set search.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "roadmap/common.hpp"

namespace roadmap::graph {

enum class Role { none, covariate, treatment, censoring, outcome };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::covariate: return "covariate";
    case Role::treatment: return "treatment";
    case Role::censoring: return "censoring";
    case Role::outcome: return "outcome";
    case Role::none: break;
  }
  return "none";
}

inline std::optional<Role> role_from_string(std::string_view s) {
  if (s == "none") return Role::none;
  if (s == "covariate") return Role::covariate;
  if (s == "treatment") return Role::treatment;
  if (s == "censoring") return Role::censoring;
  if (s == "outcome") return Role::outcome;
  return std::nullopt;
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto head = static_cast<unsigned char>(s.front());
  if (!(std::isalpha(head) || head == '_')) return false;
  return std::all_of(s.begin() + 1, s.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u == '_';
  });
}

struct Node {
  std::string id;
  Role role = Role::none;
  bool latent = false;

  bool operator==(const Node&) const = default;
};

struct Edge {
  std::string from;
  std::string to;

  bool operator==(const Edge&) const = default;
};

// Orientation of the edge between path[i] and path[i + 1].
enum class Step { forward, backward };

struct PathWitness {
  std::vector<std::string> nodes;
  std::vector<Step> steps;  // steps.size() == nodes.size() - 1
  bool blocked = false;
  std::optional<std::string> blocking_node;

  std::string to_string() const {
    std::string out = nodes.empty() ? std::string{} : nodes.front();
    for (std::size_t i = 0; i < steps.size(); ++i) {
      out += steps[i] == Step::forward ? " -> " : " <- ";
      out += nodes[i + 1];
    }
    return out;
  }

  bool operator==(const PathWitness&) const = default;
};

class CausalGraph {
 public:
  CausalGraph() = default;

  // Validates every structural invariant; throws DomainError on violation.
  CausalGraph(std::string name, std::vector<Node> nodes, std::vector<Edge> edges)
      : name_(std::move(name)), nodes_(std::move(nodes)), edges_(std::move(edges)) {
    validate();
  }

  const std::string& name() const noexcept { return name_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require(std::string_view id) const {
    auto idx = index_of(id);
    if (!idx) throw DomainError("unknown node '" + std::string(id) + "' in graph '" + name_ + "'");
    return *idx;
  }

  const Node& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<std::size_t>& parents(std::size_t i) const { return parents_.at(i); }
  const std::vector<std::size_t>& children(std::size_t i) const { return children_.at(i); }

  std::optional<std::size_t> find_role(Role r) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].role == r) return i;
    return std::nullopt;
  }

  std::optional<std::size_t> treatment() const { return find_role(Role::treatment); }
  std::optional<std::size_t> outcome() const { return find_role(Role::outcome); }
  std::optional<std::size_t> censoring() const { return find_role(Role::censoring); }

  // Mask of i and all of its descendants.
  std::vector<bool> descendants(std::size_t i) const {
    std::vector<bool> seen(size(), false);
    std::vector<std::size_t> stack{i};
    seen[i] = true;
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto c : children_[v])
        if (!seen[c]) {
          seen[c] = true;
          stack.push_back(c);
        }
    }
    return seen;
  }

  // Mask of every node in `set` together with all of their ancestors.
  std::vector<bool> ancestors_of(const std::vector<bool>& set) const {
    std::vector<bool> seen(size(), false);
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (set[i]) {
        seen[i] = true;
        stack.push_back(i);
      }
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto p : parents_[v])
        if (!seen[p]) {
          seen[p] = true;
          stack.push_back(p);
        }
    }
    return seen;
  }

  std::vector<std::size_t> topological_order() const {
    std::vector<std::size_t> indegree(size(), 0), order;
    for (std::size_t v = 0; v < size(); ++v) indegree[v] = parents_[v].size();
    std::deque<std::size_t> ready;
    for (std::size_t v = 0; v < size(); ++v)
      if (indegree[v] == 0) ready.push_back(v);
    while (!ready.empty()) {
      auto v = ready.front();
      ready.pop_front();
      order.push_back(v);
      for (auto c : children_[v])
        if (--indegree[c] == 0) ready.push_back(c);
    }
    return order;
  }

  // Copy with every edge leaving `id` deleted.
  CausalGraph without_edges_out_of(std::string_view id) const {
    require(id);
    std::vector<Edge> kept;
    for (const auto& e : edges_)
      if (e.from != id) kept.push_back(e);
    return CausalGraph(name_, nodes_, std::move(kept));
  }

  bool operator==(const CausalGraph& o) const {
    return name_ == o.name_ && nodes_ == o.nodes_ && edges_ == o.edges_;
  }

 private:
  void validate() {
    if (!is_identifier(name_)) throw DomainError("invalid graph name '" + name_ + "'");
    index_.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (!is_identifier(n.id)) throw DomainError("invalid node id '" + n.id + "'");
      if (!index_.emplace(n.id, i).second) throw DomainError("duplicate node '" + n.id + "'");
      if (n.latent && (n.role == Role::treatment || n.role == Role::outcome || n.role == Role::censoring))
        throw DomainError("latent node '" + n.id + "' cannot have role=" + std::string(to_string(n.role)));
    }
    for (Role r : {Role::treatment, Role::outcome, Role::censoring}) {
      auto count = std::count_if(nodes_.begin(), nodes_.end(), [r](const Node& n) { return n.role == r; });
      if (count > 1)
        throw DomainError("role-cardinality error: " + std::to_string(count) + " nodes with role=" +
                          std::string(to_string(r)) + " (at most one allowed)");
    }
    parents_.assign(nodes_.size(), {});
    children_.assign(nodes_.size(), {});
    for (const auto& e : edges_) {
      auto from = index_of(e.from), to = index_of(e.to);
      if (!from) throw DomainError("edge references undeclared node '" + e.from + "'");
      if (!to) throw DomainError("edge references undeclared node '" + e.to + "'");
      if (*from == *to) throw DomainError("self-edge on node '" + e.from + "'");
      auto& ch = children_[*from];
      if (std::find(ch.begin(), ch.end(), *to) != ch.end())
        throw DomainError("duplicate edge " + e.from + " -> " + e.to);
      ch.push_back(*to);
      parents_[*to].push_back(*from);
    }
    if (auto cycle = find_cycle()) {
      std::string text;
      for (std::size_t i = 0; i < cycle->size(); ++i) text += (i ? " -> " : "") + nodes_[(*cycle)[i]].id;
      throw DomainError("graph '" + name_ + "' is cyclic: " + text);
    }
  }

  // Returns a closed walk v0 -> ... -> v0 if one exists.
  std::optional<std::vector<std::size_t>> find_cycle() const {
    enum class Mark { white, grey, black };
    std::vector<Mark> mark(size(), Mark::white);
    std::vector<std::size_t> stack;
    std::optional<std::vector<std::size_t>> found;
    std::function<bool(std::size_t)> visit = [&](std::size_t v) {
      mark[v] = Mark::grey;
      stack.push_back(v);
      for (auto c : children_[v]) {
        if (mark[c] == Mark::grey) {
          auto it = std::find(stack.begin(), stack.end(), c);
          found = std::vector<std::size_t>(it, stack.end());
          found->push_back(c);
          return true;
        }
        if (mark[c] == Mark::white && visit(c)) return true;
      }
      stack.pop_back();
      mark[v] = Mark::black;
      return false;
    };
    for (std::size_t v = 0; v < size(); ++v)
      if (mark[v] == Mark::white && visit(v)) return found;
    return std::nullopt;
  }

  std::string name_;
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
};

// ---------------------------------------------------------------------------
// DSL

namespace detail {

struct Token {
  enum class Kind { ident, lbrace, rbrace, semicolon, equals, arrow, end };
  Kind kind;
  std::string text;
  int line;
  int column;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_blank();
    Token t{Token::Kind::end, "", line_, col_};
    if (pos_ >= src_.size()) return t;
    char c = src_[pos_];
    auto single = [&](Token::Kind k) {
      t.kind = k;
      t.text = std::string(1, c);
      advance();
      return t;
    };
    switch (c) {
      case '{': return single(Token::Kind::lbrace);
      case '}': return single(Token::Kind::rbrace);
      case ';': return single(Token::Kind::semicolon);
      case '=': return single(Token::Kind::equals);
      case '-':
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
          advance();
          advance();
          t.kind = Token::Kind::arrow;
          t.text = "->";
          return t;
        }
        break;
      default: break;
    }
    auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        advance();
      t.kind = Token::Kind::ident;
      t.text = std::string(src_.substr(start, pos_ - start));
      return t;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", line_, col_);
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_blank() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : lex_(src) { tok_ = lex_.next(); }

  CausalGraph parse() {
    expect_keyword("graph");
    std::string name = expect_ident("graph name").text;
    expect(Token::Kind::lbrace, "'{'");
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    std::unordered_map<std::string, std::pair<int, int>> declared;
    std::vector<std::pair<int, int>> edge_pos;
    while (tok_.kind == Token::Kind::ident) {
      if (tok_.text == "node") {
        shift();
        Token id = expect_ident("node id");
        Node n{id.text, Role::none, false};
        bool saw_role = false;
        while (tok_.kind == Token::Kind::ident) {
          if (tok_.text == "role" && !saw_role) {
            shift();
            expect(Token::Kind::equals, "'='");
            Token r = expect_ident("role");
            auto role = role_from_string(r.text);
            if (!role) throw ParseError("unknown role '" + r.text + "'", r.line, r.column);
            n.role = *role;
            saw_role = true;
          } else if (tok_.text == "latent" && !n.latent) {
            shift();
            n.latent = true;
          } else {
            throw ParseError("unexpected '" + tok_.text + "' in node declaration", tok_.line, tok_.column);
          }
        }
        expect(Token::Kind::semicolon, "';'");
        if (!declared.emplace(n.id, std::make_pair(id.line, id.column)).second)
          throw ParseError("duplicate node '" + n.id + "'", id.line, id.column);
        nodes.push_back(std::move(n));
      } else if (tok_.text == "edge") {
        Token kw = tok_;
        shift();
        std::string from = expect_ident("edge source").text;
        expect(Token::Kind::arrow, "'->'");
        std::string to = expect_ident("edge target").text;
        expect(Token::Kind::semicolon, "';'");
        for (std::size_t i = 0; i < edges.size(); ++i)
          if (edges[i].from == from && edges[i].to == to)
            throw ParseError("duplicate edge " + from + " -> " + to, kw.line, kw.column);
        edges.push_back({from, to});
        edge_pos.emplace_back(kw.line, kw.column);
      } else {
        throw ParseError("expected 'node', 'edge' or '}', found '" + tok_.text + "'", tok_.line, tok_.column);
      }
    }
    expect(Token::Kind::rbrace, "'}'");
    if (tok_.kind != Token::Kind::end)
      throw ParseError("trailing input after graph body", tok_.line, tok_.column);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      for (const auto* end : {&edges[i].from, &edges[i].to})
        if (!declared.count(*end))
          throw ParseError("edge references undeclared node '" + *end + "'", edge_pos[i].first,
                           edge_pos[i].second);
    }
    return CausalGraph(std::move(name), std::move(nodes), std::move(edges));
  }

 private:
  void shift() { tok_ = lex_.next(); }

  static std::string describe(const Token& t) {
    return t.kind == Token::Kind::end ? std::string("end of input") : "'" + t.text + "'";
  }

  Token expect(Token::Kind k, const char* what) {
    if (tok_.kind != k)
      throw ParseError(std::string("expected ") + what + ", found " + describe(tok_), tok_.line, tok_.column);
    Token t = tok_;
    shift();
    return t;
  }

  Token expect_ident(const char* what) {
    if (tok_.kind != Token::Kind::ident)
      throw ParseError(std::string("expected ") + what + ", found " + describe(tok_), tok_.line, tok_.column);
    Token t = tok_;
    shift();
    return t;
  }

  void expect_keyword(const char* kw) {
    if (tok_.kind != Token::Kind::ident || tok_.text != kw)
      throw ParseError(std::string("expected '") + kw + "', found " + describe(tok_), tok_.line, tok_.column);
    shift();
  }

  Lexer lex_;
  Token tok_;
};

}  // namespace detail

// Parses the DAG DSL. Syntax problems raise ParseError (with line/column);
// structural problems (cycle, role cardinality, latent role) raise DomainError.
inline CausalGraph parse_graph(std::string_view text) { return detail::Parser(text).parse(); }

inline std::string render(const CausalGraph& g) {
  std::ostringstream out;
  out << "graph " << g.name() << " {\n";
  for (const auto& n : g.nodes()) {
    out << "  node " << n.id;
    if (n.role != Role::none) out << " role=" << to_string(n.role);
    if (n.latent) out << " latent";
    out << ";\n";
  }
  for (const auto& e : g.edges()) out << "  edge " << e.from << " -> " << e.to << ";\n";
  out << "}\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// d-separation

namespace detail {

// Bayes-ball reachability. Returns true iff y is d-connected to x given z.
inline bool d_connected(const CausalGraph& g, std::size_t x, std::size_t y, const std::vector<bool>& z) {
  const auto anc = g.ancestors_of(z);
  // visited[v][0]: arrived from a child (moving up); [1]: from a parent.
  std::vector<std::array<bool, 2>> visited(g.size(), {false, false});
  std::vector<std::pair<std::size_t, int>> queue{{x, 0}};
  while (!queue.empty()) {
    auto [v, dir] = queue.back();
    queue.pop_back();
    if (visited[v][dir]) continue;
    visited[v][dir] = true;
    if (v == y && !z[v]) return true;
    if (dir == 0 && !z[v]) {
      for (auto p : g.parents(v)) queue.emplace_back(p, 0);
      for (auto c : g.children(v)) queue.emplace_back(c, 1);
    } else if (dir == 1) {
      if (!z[v])
        for (auto c : g.children(v)) queue.emplace_back(c, 1);
      if (anc[v])
        for (auto p : g.parents(v)) queue.emplace_back(p, 0);
    }
  }
  return false;
}

// Walks simple paths from x to y, calling `visit` on each complete path with
// its blocking status. A middle node is evaluated as soon as both of its
// edges are known; `prune_blocked` stops extension at the first blocker.
template <typename Visit>
void walk_paths(const CausalGraph& g, std::size_t x, std::size_t y, const std::vector<bool>& z,
                bool prune_blocked, Visit&& visit) {
  const auto anc = g.ancestors_of(z);
  std::vector<std::size_t> path{x};
  std::vector<Step> steps;
  std::vector<bool> on_path(g.size(), false);
  on_path[x] = true;
  bool stop = false;

  std::function<void(std::optional<std::size_t>)> extend = [&](std::optional<std::size_t> blocker) {
    if (stop) return;
    std::size_t v = path.back();
    if (v == y) {
      if (!visit(path, steps, blocker)) stop = true;
      return;
    }
    auto try_step = [&](std::size_t w, Step s) {
      if (on_path[w] || stop) return;
      std::optional<std::size_t> b = blocker;
      if (path.size() > 1 && !b) {
        bool collider = steps.back() == Step::forward && s == Step::backward;
        bool open = collider ? anc[v] : !z[v];
        if (!open) b = v;
      }
      if (b && prune_blocked) return;
      path.push_back(w);
      steps.push_back(s);
      on_path[w] = true;
      extend(b);
      on_path[w] = false;
      steps.pop_back();
      path.pop_back();
    };
    for (auto c : g.children(v)) try_step(c, Step::forward);
    for (auto p : g.parents(v)) try_step(p, Step::backward);
  };
  extend(std::nullopt);
}

inline PathWitness make_witness(const CausalGraph& g, const std::vector<std::size_t>& path,
                                const std::vector<Step>& steps, std::optional<std::size_t> blocker) {
  PathWitness w;
  for (auto v : path) w.nodes.push_back(g.node(v).id);
  w.steps = steps;
  w.blocked = blocker.has_value();
  if (blocker) w.blocking_node = g.node(*blocker).id;
  return w;
}

inline std::vector<bool> mask_of(const CausalGraph& g, const std::vector<std::string>& ids) {
  std::vector<bool> m(g.size(), false);
  for (const auto& id : ids) m[g.require(id)] = true;
  return m;
}

}  // namespace detail

struct DSeparationResult {
  bool separated = true;
  std::vector<PathWitness> witnesses;  // one open path when not separated
};

inline DSeparationResult d_separated(const CausalGraph& g, std::string_view x, std::string_view y,
                                     const std::vector<std::string>& z) {
  auto xi = g.require(x), yi = g.require(y);
  if (xi == yi) throw DomainError("d-separation query needs two distinct nodes");
  auto zm = detail::mask_of(g, z);
  if (zm[xi] || zm[yi]) throw DomainError("d-separation query endpoints must not be in the conditioning set");
  DSeparationResult out;
  out.separated = !detail::d_connected(g, xi, yi, zm);
  if (!out.separated) {
    detail::walk_paths(g, xi, yi, zm, true, [&](const auto& path, const auto& steps, auto blocker) {
      out.witnesses.push_back(detail::make_witness(g, path, steps, blocker));
      return false;
    });
  }
  return out;
}

// Every simple path between x and y with its status under z, capped at
// `limit` paths. Used as evidence in identification reports.
inline std::vector<PathWitness> enumerate_paths(const CausalGraph& g, std::string_view x, std::string_view y,
                                                const std::vector<std::string>& z, std::size_t limit = 64) {
  auto xi = g.require(x), yi = g.require(y);
  auto zm = detail::mask_of(g, z);
  std::vector<PathWitness> out;
  detail::walk_paths(g, xi, yi, zm, false, [&](const auto& path, const auto& steps, auto blocker) {
    out.push_back(detail::make_witness(g, path, steps, blocker));
    return out.size() < limit;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Adjustment sets

using NodeSet = std::vector<std::string>;  // kept sorted

inline constexpr std::size_t kMaxAdjustmentPool = 20;

struct AdjustmentQuery {
  std::size_t treatment;
  std::size_t outcome;
  std::optional<std::size_t> censoring;
  std::vector<std::size_t> pool;  // candidate indices, declaration order
  CausalGraph backdoor_graph;     // edges out of treatment removed
  std::optional<CausalGraph> censoring_graph;
};

inline AdjustmentQuery prepare_adjustment_query(const CausalGraph& g) {
  auto a = g.treatment();
  auto y = g.outcome();
  if (!a) throw DomainError("graph '" + g.name() + "' has no node with role=treatment");
  if (!y) throw DomainError("graph '" + g.name() + "' has no node with role=outcome");
  AdjustmentQuery q{*a, *y, g.censoring(), {}, g.without_edges_out_of(g.node(*a).id), std::nullopt};
  if (q.censoring) q.censoring_graph = g.without_edges_out_of(g.node(*q.censoring).id);
  auto desc = g.descendants(*a);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (desc[i] || g.node(i).latent || i == q.outcome || (q.censoring && i == *q.censoring)) continue;
    q.pool.push_back(i);
  }
  if (q.pool.size() > kMaxAdjustmentPool)
    throw DomainError("adjustment candidate pool has " + std::to_string(q.pool.size()) + " nodes (limit " +
                      std::to_string(kMaxAdjustmentPool) + ")");
  return q;
}

// Condition (i): z blocks every backdoor path from treatment to outcome.
inline bool blocks_backdoor(const AdjustmentQuery& q, const std::vector<bool>& z) {
  return !detail::d_connected(q.backdoor_graph, q.treatment, q.outcome, z);
}

// Condition (ii): censoring independent of outcome given z and treatment once
// the censoring node's own effects are removed.
inline bool blocks_censoring(const AdjustmentQuery& q, std::vector<bool> z) {
  if (!q.censoring) return true;
  z[q.treatment] = true;
  return !detail::d_connected(*q.censoring_graph, *q.censoring, q.outcome, z);
}

// All minimal valid adjustment sets, ordered by size then lexicographically.
inline std::vector<NodeSet> find_adjustment_sets(const CausalGraph& g) {
  auto q = prepare_adjustment_query(g);
  const std::size_t m = q.pool.size();
  std::vector<std::uint32_t> kept;
  std::vector<bool> z(g.size(), false);
  for (std::size_t k = 0; k <= m; ++k) {
    // Gosper's hack over all k-subsets of the pool.
    std::uint64_t mask = k == 0 ? 0 : (std::uint64_t{1} << k) - 1;
    const std::uint64_t limit = std::uint64_t{1} << m;
    while (mask < limit) {
      auto sub = static_cast<std::uint32_t>(mask);
      bool superset = std::any_of(kept.begin(), kept.end(), [sub](std::uint32_t s) { return (s & sub) == s; });
      if (!superset) {
        std::fill(z.begin(), z.end(), false);
        for (std::size_t b = 0; b < m; ++b)
          if (sub >> b & 1U) z[q.pool[b]] = true;
        if (blocks_backdoor(q, z) && blocks_censoring(q, z)) kept.push_back(sub);
      }
      if (k == 0) break;
      std::uint64_t c = mask & (~mask + 1), r = mask + c;
      mask = (((r ^ mask) >> 2) / c) | r;
    }
  }
  std::vector<NodeSet> sets;
  for (auto sub : kept) {
    NodeSet s;
    for (std::size_t b = 0; b < m; ++b)
      if (sub >> b & 1U) s.push_back(g.node(q.pool[b]).id);
    std::sort(s.begin(), s.end());
    sets.push_back(std::move(s));
  }
  std::stable_sort(sets.begin(), sets.end(), [](const NodeSet& a, const NodeSet& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return sets;
}

}  // namespace roadmap::graph
