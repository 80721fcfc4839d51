#pragma once

// Causal question -> identification verdicts -> statistical estimand.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "roadmap/common.hpp"
#include "roadmap/graph.hpp"

namespace roadmap::estimand {

using graph::CausalGraph;
using graph::NodeSet;
using graph::PathWitness;

enum class Contrast { risk_difference, risk_ratio };

inline std::string_view to_string(Contrast c) {
  return c == Contrast::risk_difference ? "risk_difference" : "risk_ratio";
}

inline std::optional<Contrast> contrast_from_string(std::string_view s) {
  if (s == "risk_difference") return Contrast::risk_difference;
  if (s == "risk_ratio") return Contrast::risk_ratio;
  return std::nullopt;
}

struct TreatmentStrategy {
  int treatment_level = 1;
  int censoring_level = 0;

  bool operator==(const TreatmentStrategy&) const = default;
};

struct CausalEstimand {
  std::string population;
  TreatmentStrategy strategy1{1, 0};
  TreatmentStrategy strategy0{0, 0};
  std::string outcome;
  std::string outcome_description;
  Contrast contrast = Contrast::risk_difference;

  void validate() const {
    for (const auto* s : {&strategy1, &strategy0}) {
      if (s->treatment_level != 0 && s->treatment_level != 1)
        throw DomainError("treatment strategy level must be 0 or 1");
      if (s->censoring_level != 0) throw DomainError("treatment strategies must set censoring to 0");
    }
    if (strategy1.treatment_level == strategy0.treatment_level)
      throw DomainError("the two treatment strategies must differ in treatment level");
    if (outcome.empty()) throw DomainError("causal estimand has no outcome");
  }

  bool operator==(const CausalEstimand&) const = default;
};

enum class Verdict { satisfied, violated, empirical };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::satisfied: return "satisfied";
    case Verdict::violated: return "violated";
    case Verdict::empirical: break;
  }
  return "empirical - see diagnostics";
}

struct AssumptionVerdict {
  std::string assumption;
  Verdict verdict = Verdict::empirical;
  std::string detail;
  std::vector<PathWitness> evidence;
};

enum class IdentificationStatus { identified, not_identified };

struct IdentificationResult {
  IdentificationStatus status = IdentificationStatus::not_identified;
  std::vector<NodeSet> adjustment_sets;
  // Always three entries, in this order: exchangeability-for-treatment,
  // exchangeability-for-censoring, positivity.
  std::vector<AssumptionVerdict> assumptions;
  std::string treatment;
  std::string outcome;
  std::optional<std::string> censoring;

  bool identified() const { return status == IdentificationStatus::identified; }

  // Open paths supporting a not_identified verdict.
  std::vector<PathWitness> open_paths() const {
    std::vector<PathWitness> out;
    for (const auto& a : assumptions)
      if (a.verdict == Verdict::violated)
        for (const auto& w : a.evidence)
          if (!w.blocked) out.push_back(w);
    return out;
  }
};

class NotIdentifiedError : public DomainError {
 public:
  explicit NotIdentifiedError(std::vector<PathWitness> witnesses)
      : DomainError(message(witnesses)), witnesses_(std::move(witnesses)) {}

  const std::vector<PathWitness>& witnesses() const noexcept { return witnesses_; }

 private:
  static std::string message(const std::vector<PathWitness>& ws) {
    std::string m = "causal estimand is not identified";
    for (std::size_t i = 0; i < ws.size(); ++i) m += (i ? "; " : ": open path ") + ws[i].to_string();
    return m;
  }

  std::vector<PathWitness> witnesses_;
};

struct StatisticalEstimand {
  NodeSet adjustment_set;
  Contrast contrast = Contrast::risk_difference;
  std::string treatment;
  std::string outcome;
  std::optional<std::string> censoring;

  // Human-readable g-formula, e.g.
  // E_W(P[Y*|C=0,A=1,W] - P[Y*|C=0,A=0,W]).
  std::string formula() const {
    std::string z;
    for (std::size_t i = 0; i < adjustment_set.size(); ++i) z += (i ? "," : "") + adjustment_set[i];
    auto arm = [&](int a) {
      std::string cond = censoring ? *censoring + "=0," : "";
      cond += treatment + "=" + std::to_string(a);
      if (!z.empty()) cond += "," + z;
      return "P[" + outcome + "*|" + cond + "]";
    };
    if (z.empty()) return arm(1) + (contrast == Contrast::risk_difference ? " - " : " / ") + arm(0);
    std::string e = "E_{" + z + "}";
    if (contrast == Contrast::risk_difference) return e + "(" + arm(1) + " - " + arm(0) + ")";
    return e + "(" + arm(1) + ") / " + e + "(" + arm(0) + ")";
  }

  bool operator==(const StatisticalEstimand&) const = default;
};

namespace detail {

inline NodeSet ids_of(const CausalGraph& g, const std::vector<std::size_t>& idx) {
  NodeSet s;
  for (auto i : idx) s.push_back(g.node(i).id);
  return s;
}

// True iff some subset of the candidate pool satisfies `cond` on its own.
template <typename Cond>
bool satisfiable(const graph::AdjustmentQuery& q, std::size_t n, Cond cond) {
  const std::size_t m = q.pool.size();
  std::vector<bool> z(n, false);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
    std::fill(z.begin(), z.end(), false);
    for (std::size_t b = 0; b < m; ++b)
      if (mask >> b & 1U) z[q.pool[b]] = true;
    if (cond(z)) return true;
  }
  return false;
}

}  // namespace detail

inline IdentificationResult check_identification(const CausalGraph& g, const CausalEstimand& ce) {
  ce.validate();
  auto y = g.index_of(ce.outcome);
  if (!y) throw DomainError("estimand outcome '" + ce.outcome + "' is not a node of graph '" + g.name() + "'");
  if (g.node(*y).role != graph::Role::outcome)
    throw DomainError("estimand outcome '" + ce.outcome + "' does not carry role=outcome in graph '" + g.name() +
                      "'");
  auto q = graph::prepare_adjustment_query(g);

  IdentificationResult ir;
  ir.treatment = g.node(q.treatment).id;
  ir.outcome = g.node(q.outcome).id;
  if (q.censoring) ir.censoring = g.node(*q.censoring).id;
  ir.adjustment_sets = graph::find_adjustment_sets(g);
  ir.status = ir.adjustment_sets.empty() ? IdentificationStatus::not_identified : IdentificationStatus::identified;

  // Evidence is evaluated under the first adjustment set when identified and
  // under the whole candidate pool otherwise.
  NodeSet z = ir.identified() ? ir.adjustment_sets.front() : detail::ids_of(g, q.pool);
  auto zm = graph::detail::mask_of(g, z);

  AssumptionVerdict treat{"exchangeability-for-treatment", Verdict::satisfied, "", {}};
  AssumptionVerdict cens{"exchangeability-for-censoring", Verdict::satisfied, "", {}};

  bool backdoor_ok = graph::blocks_backdoor(q, zm);
  if (backdoor_ok) {
    treat.detail = "every backdoor path from " + ir.treatment + " to " + ir.outcome + " is blocked";
    treat.evidence = graph::enumerate_paths(q.backdoor_graph, ir.treatment, ir.outcome, z);
  } else {
    treat.verdict = Verdict::violated;
    bool some = detail::satisfiable(q, g.size(), [&](const auto& m) { return graph::blocks_backdoor(q, m); });
    treat.detail = some ? "backdoor paths can be blocked, but not jointly with the censoring condition"
                        : "an open backdoor path cannot be blocked by measured pre-treatment variables";
    treat.evidence = graph::d_separated(q.backdoor_graph, ir.treatment, ir.outcome, z).witnesses;
  }

  if (!q.censoring) {
    cens.detail = "no censoring node; outcome observed for everyone";
  } else {
    auto zc = z;
    zc.push_back(ir.treatment);
    if (graph::blocks_censoring(q, zm)) {
      cens.detail = *ir.censoring + " is independent of " + ir.outcome + " given the adjustment set and treatment";
      cens.evidence = graph::enumerate_paths(*q.censoring_graph, *ir.censoring, ir.outcome, zc);
    } else {
      cens.verdict = Verdict::violated;
      bool some = detail::satisfiable(q, g.size(), [&](const auto& m) { return graph::blocks_censoring(q, m); });
      cens.detail = some ? "censoring paths can be blocked, but not jointly with the backdoor condition"
                         : "an open path links censoring and outcome that no measured set blocks";
      cens.evidence = graph::d_separated(*q.censoring_graph, *ir.censoring, ir.outcome, zc).witnesses;
    }
  }

  ir.assumptions.push_back(std::move(treat));
  ir.assumptions.push_back(std::move(cens));
  ir.assumptions.push_back({"positivity", Verdict::empirical,
                            "cannot be established from the graph; check propensity diagnostics", {}});
  return ir;
}

inline StatisticalEstimand compile_statistical_estimand(const CausalEstimand& ce, const IdentificationResult& ir,
                                                        std::size_t choice = 0) {
  if (!ir.identified()) throw NotIdentifiedError(ir.open_paths());
  if (choice >= ir.adjustment_sets.size())
    throw DomainError("adjustment-set index " + std::to_string(choice) + " out of range (" +
                      std::to_string(ir.adjustment_sets.size()) + " sets available)");
  if (ce.outcome != ir.outcome)
    throw DomainError("estimand outcome '" + ce.outcome + "' differs from identified outcome '" + ir.outcome + "'");
  return {ir.adjustment_sets[choice], ce.contrast, ir.treatment, ir.outcome, ir.censoring};
}

}  // namespace roadmap::estimand
