#pragma once

// JSON and markdown renderings of every result type.

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "roadmap/dataset.hpp"
#include "roadmap/estimand.hpp"
#include "roadmap/estimation.hpp"
#include "roadmap/graph.hpp"
#include "roadmap/sensitivity.hpp"
#include "roadmap/simulation.hpp"

namespace roadmap::report {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Non-finite values become null.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json interval(const estimation::Interval& i) { return Json::array({num(i.lo), num(i.hi)}); }

inline Json to_json(const graph::CausalGraph& g) {
  Json nodes = Json::array(), edges = Json::array();
  for (const auto& n : g.nodes())
    nodes.push_back({{"id", n.id}, {"role", graph::to_string(n.role)}, {"latent", n.latent}});
  for (const auto& e : g.edges()) edges.push_back({{"from", e.from}, {"to", e.to}});
  return {{"name", g.name()}, {"nodes", nodes}, {"edges", edges}, {"canonical", graph::render(g)}};
}

inline Json to_json(const graph::PathWitness& w) {
  Json j{{"path", w.to_string()}, {"blocked", w.blocked}};
  j["blocking_node"] = w.blocking_node ? Json(*w.blocking_node) : Json(nullptr);
  return j;
}

inline Json to_json(const estimand::CausalEstimand& ce) {
  auto strategy = [](const estimand::TreatmentStrategy& s) {
    return Json{{"treatment", s.treatment_level}, {"censoring", s.censoring_level}};
  };
  return {{"population", ce.population},
          {"strategy1", strategy(ce.strategy1)},
          {"strategy0", strategy(ce.strategy0)},
          {"outcome", ce.outcome},
          {"outcome_description", ce.outcome_description},
          {"contrast", estimand::to_string(ce.contrast)}};
}

inline Json to_json(const estimand::IdentificationResult& ir) {
  Json sets = Json::array();
  for (const auto& s : ir.adjustment_sets) sets.push_back(s);
  Json assumptions = Json::array();
  for (const auto& a : ir.assumptions) {
    Json ev = Json::array();
    for (const auto& w : a.evidence) ev.push_back(to_json(w));
    assumptions.push_back(
        {{"assumption", a.assumption}, {"verdict", estimand::to_string(a.verdict)}, {"detail", a.detail}, {"evidence", ev}});
  }
  Json open = Json::array();
  for (const auto& w : ir.open_paths()) open.push_back(w.to_string());
  return {{"status", ir.identified() ? "identified" : "not_identified"},
          {"treatment", ir.treatment},
          {"outcome", ir.outcome},
          {"censoring", ir.censoring ? Json(*ir.censoring) : Json(nullptr)},
          {"adjustment_sets", sets},
          {"assumptions", assumptions},
          {"open_paths", open}};
}

inline Json to_json(const estimand::StatisticalEstimand& se) {
  return {{"adjustment_set", se.adjustment_set},
          {"contrast", estimand::to_string(se.contrast)},
          {"treatment", se.treatment},
          {"outcome", se.outcome},
          {"censoring", se.censoring ? Json(*se.censoring) : Json(nullptr)},
          {"formula", se.formula()}};
}

inline Json to_json(const estimation::EstimatorConfig& cfg) {
  Json lib = Json::array();
  for (const auto& l : cfg.super_learner.library) lib.push_back(l.name());
  return {{"library", lib},
          {"folds", cfg.super_learner.folds == 0 ? Json("auto") : Json(cfg.super_learner.folds)},
          {"seed", cfg.super_learner.seed},
          {"propensity_bounds", interval(cfg.propensity_bounds)},
          {"outcome_bounds", interval(cfg.outcome_bounds)},
          {"bootstrap_resamples", cfg.bootstrap_resamples},
          {"confidence_interval", "Wald 95% from the influence curve (bootstrap SE for gcomp); log scale for ratios"}};
}

inline Json to_json(const estimation::EstimateResult& r) {
  Json fits = Json::array();
  for (const auto& f : r.nuisance.fits) {
    Json risks = Json::array();
    for (std::size_t i = 0; i < f.learners.size(); ++i)
      risks.push_back({{"learner", f.learners[i]}, {"cv_risk", num(f.cv_risk[i])}});
    fits.push_back({{"role", f.role}, {"selected", f.selected}, {"cv_risk", risks}, {"fell_back", f.fell_back}});
  }
  Json eps = Json::array();
  for (double e : r.nuisance.fluctuation_epsilon) eps.push_back(num(e));
  return {{"method", estimation::to_string(r.method)},
          {"contrast", estimand::to_string(r.contrast)},
          {"point", num(r.point)},
          {"se", num(r.se)},
          {"se_scale", r.contrast == estimand::Contrast::risk_ratio ? "log" : "difference"},
          {"ci95", interval(r.ci95)},
          {"risk1", num(r.risk1)},
          {"risk0", num(r.risk0)},
          {"difference", {{"se", num(r.difference_se)}, {"ci95", interval(r.difference_ci)}}},
          {"ratio", {{"log_se", num(r.log_ratio_se)}, {"ci95", interval(r.ratio_ci)}}},
          {"degenerate_variance", r.degenerate_variance},
          {"n", r.n},
          {"n_uncensored", r.n_uncensored},
          {"nuisance",
           {{"fits", fits},
            {"ic_mean", num(r.nuisance.ic_mean)},
            {"ic_sd", num(r.nuisance.ic_sd)},
            {"score_equation_solved",
             r.method == estimation::Method::tmle
                 ? Json(estimation::score_equation_solved(r.nuisance.ic_mean, r.nuisance.ic_sd))
                 : Json(nullptr)},
            {"fluctuation_epsilon", eps},
            {"propensity_bounds", interval(r.nuisance.propensity_bounds)},
            {"propensity_truncated", r.nuisance.propensity_truncated},
            {"bootstrap_resamples", r.nuisance.bootstrap_resamples},
            {"bootstrap_failures", r.nuisance.bootstrap_failures}}}};
}

inline Json to_json(const data::MissingnessSummary& s) {
  Json cols = Json::object();
  for (const auto& [name, frac] : s.missing_fraction) cols[name] = num(frac);
  return {{"n", s.n},
          {"missing_fraction", cols},
          {"censoring_by_outcome",
           {{"uncensored_observed", s.uncensored_observed},
            {"uncensored_missing", s.uncensored_missing},
            {"censored_observed", s.censored_observed},
            {"censored_missing", s.censored_missing}}},
          {"inconsistent_rows", s.inconsistent_rows}};
}

inline Json to_json(const data::PositivityReport& p) {
  Json strata = Json::array();
  for (const auto& s : p.strata)
    strata.push_back({{"stratum", s.key},
                      {"n", s.n},
                      {"treated", s.treated},
                      {"proportion", num(s.proportion)},
                      {"flagged", s.flagged}});
  return {{"threshold", p.threshold},
          {"learner", p.learner},
          {"propensity_min", num(p.propensity_min)},
          {"propensity_max", num(p.propensity_max)},
          {"fraction_below", num(p.fraction_below)},
          {"fraction_above", num(p.fraction_above)},
          {"discrete", p.discrete},
          {"strata", strata}};
}

inline Json to_json(const sensitivity::SensitivityReport& s) {
  Json nc = Json::array();
  for (const auto& r : s.negative_controls)
    nc.push_back({{"column", r.column}, {"null_excluded", r.null_excluded}, {"estimate", to_json(r.estimate)}});
  Json gap = nullptr;
  if (s.gap_applied)
    gap = {{"lo", s.gap.lo},
           {"hi", s.gap.hi},
           {"provenance", s.gap.provenance},
           {"scale", "risk_difference"},
           {"shifted_ci95", interval(s.shifted_ci)}};
  return {{"causal_gap", gap},
          {"e_value",
           {{"risk_ratio", num(s.e_value.risk_ratio)},
            {"point", num(s.e_value.point)},
            {"ci_limit", num(s.e_value.ci)},
            {"note", "computed from the arm-risk ratio P1/P0 regardless of the headline contrast"}}},
          {"negative_controls", nc},
          {"verdict", s.verdict}};
}

inline Json to_json(const dgp::Truth& t) {
  return {{"risk1", num(t.risk1)}, {"risk0", num(t.risk0)}, {"value", num(t.value)}, {"exact", t.exact},
          {"mc_se", num(t.mc_se)}};
}

inline Json to_json(const simulation::Metric& m) { return {{"value", num(m.value)}, {"mc_se", num(m.mc_se)}}; }

inline Json to_json(const simulation::DesignSpec& d) {
  Json j{{"name", d.name}, {"kind", simulation::to_string(d.kind)}};
  if (d.kind == simulation::DesignKind::hybrid) {
    j["n_rct"] = d.n_rct;
    j["n_external"] = d.n_external;
    j["deltas"] = d.deltas;
  } else {
    j["n"] = d.n;
  }
  Json est = Json::array();
  for (auto m : d.estimators) est.push_back(estimation::to_string(m));
  j["estimators"] = est;
  j["alpha"] = d.alpha;
  j["adjustment"] = d.adjustment ? Json(*d.adjustment) : Json(nullptr);
  return j;
}

inline Json to_json(const simulation::SimulationReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"design", c.design},
                     {"kind", simulation::to_string(c.kind)},
                     {"estimator", estimation::to_string(c.estimator)},
                     {"delta", c.delta},
                     {"valid", c.valid},
                     {"failures_null", c.failures_null},
                     {"failures_alt", c.failures_alt},
                     {"mean_estimate", num(c.mean_estimate)},
                     {"bias", to_json(c.bias)},
                     {"variance", to_json(c.variance)},
                     {"coverage", to_json(c.coverage)},
                     {"type_one_error", to_json(c.type_one)},
                     {"power", to_json(c.power)},
                     {"mean_n", c.mean_n}});
  Json hybrid = Json::array();
  for (const auto& h : r.hybrid)
    hybrid.push_back({{"design", h.design},
                      {"estimator", estimation::to_string(h.estimator)},
                      {"worst_case_type_one_error", num(h.worst_type_one)},
                      {"worst_case_mc_se", num(h.worst_mc_se)},
                      {"worst_case_delta", h.worst_delta},
                      {"nondecreasing_over_grid", h.nondecreasing},
                      {"mean_total_n", h.mean_total_n}});
  return {{"replications", r.replications},
          {"master_seed", r.seed},
          {"truth_null", to_json(r.truth_null)},
          {"truth_alt", to_json(r.truth_alt)},
          {"cells", cells},
          {"hybrid", hybrid}};
}

// ---------------------------------------------------------------------------
// Markdown

inline std::string fmt(double v, int digits = 4) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

inline std::string simulation_table(const simulation::SimulationReport& r) {
  std::ostringstream o;
  o << "| design | estimator | delta | bias (MC SE) | variance | coverage | type I | power | mean n | valid |\n"
    << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& c : r.cells)
    o << "| " << c.design << " | " << estimation::to_string(c.estimator) << " | " << fmt(c.delta, 2) << " | "
      << fmt(c.bias.value) << " (" << fmt(c.bias.mc_se) << ") | " << fmt(c.variance.value, 5) << " | "
      << fmt(c.coverage.value, 3) << " | " << fmt(c.type_one.value, 3) << " | " << fmt(c.power.value, 3) << " | "
      << fmt(c.mean_n, 0) << " | " << (c.valid ? "yes" : "no") << " |\n";
  if (!r.hybrid.empty()) {
    o << "\n| hybrid design | estimator | worst-case type I (MC SE) | at delta | nondecreasing | mean total n |\n"
      << "|---|---|---|---|---|---|\n";
    for (const auto& h : r.hybrid)
      o << "| " << h.design << " | " << estimation::to_string(h.estimator) << " | " << fmt(h.worst_type_one, 3) << " ("
        << fmt(h.worst_mc_se, 3) << ") | " << fmt(h.worst_delta, 2) << " | " << (h.nondecreasing ? "yes" : "no")
        << " | " << fmt(h.mean_total_n, 0) << " |\n";
  }
  o << "\nTruth (alternative): " << fmt(r.truth_alt.value, 5) << "; truth (null): " << fmt(r.truth_null.value, 5)
    << "; replications: " << r.replications << "; master seed: " << r.seed << "\n";
  return o.str();
}

}  // namespace roadmap::report
