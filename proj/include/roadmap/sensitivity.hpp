#pragma once

// Causal-gap shifted intervals, E-values and negative-control outcomes.

#include <cmath>
#include <string>
#include <vector>

#include "roadmap/common.hpp"
#include "roadmap/dataset.hpp"
#include "roadmap/estimation.hpp"

namespace roadmap::sensitivity {

using estimand::Contrast;
using estimand::StatisticalEstimand;
using estimation::EstimateResult;
using estimation::EstimatorConfig;
using estimation::Interval;
using estimation::Method;

// Gap = statistical estimand minus causal estimand, on the difference scale.
struct GapBounds {
  double lo = 0;
  double hi = 0;
  std::string provenance;

  void validate() const {
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw DomainError("causal gap bounds must be finite");
    if (lo > hi) throw DomainError("causal gap lower bound exceeds upper bound");
    if (provenance.empty()) throw DomainError("causal gap bounds require a provenance statement");
  }
};

inline Interval shifted_interval(const EstimateResult& er, const GapBounds& gb) {
  gb.validate();
  if (er.contrast != Contrast::risk_difference)
    throw DomainError("scale mismatch: causal gap bounds apply to the risk-difference scale only, estimate is " +
                      std::string(estimand::to_string(er.contrast)));
  return {er.ci95.lo - gb.hi, er.ci95.hi - gb.lo};
}

inline double e_value_of_ratio(double rr) {
  if (!(rr > 0) || !std::isfinite(rr)) throw DomainError("E-value needs a positive finite risk ratio");
  if (rr < 1) rr = 1 / rr;
  return rr + std::sqrt(rr * (rr - 1));
}

struct EValue {
  double risk_ratio = 1;
  double point = 1;
  double ci = 1;  // for the confidence limit closer to the null
};

// Uses the arm risks whatever the headline contrast is.
inline EValue e_value(const EstimateResult& er) {
  if (!(er.risk0 > 0)) throw DomainError("E-value undefined: estimated control-arm risk is zero");
  EValue e;
  e.risk_ratio = er.risk1 / er.risk0;
  e.point = e_value_of_ratio(e.risk_ratio);
  const Interval& ci = er.ratio_ci;
  if (!std::isfinite(ci.lo) || !std::isfinite(ci.hi) || ci.lo <= 0) {
    e.ci = 1;
  } else if (ci.lo <= 1 && ci.hi >= 1) {
    e.ci = 1;
  } else {
    e.ci = e_value_of_ratio(ci.lo > 1 ? ci.lo : ci.hi);
  }
  return e;
}

struct NegativeControlResult {
  std::string column;
  EstimateResult estimate;
  bool null_excluded = false;
};

inline std::vector<NegativeControlResult> negative_control_check(const data::Dataset& d,
                                                                 const StatisticalEstimand& se,
                                                                 const std::vector<std::string>& columns,
                                                                 Method method, const EstimatorConfig& cfg = {}) {
  std::vector<NegativeControlResult> out;
  for (const auto& col : columns) {
    if (col == se.outcome) throw DomainError("negative-control column '" + col + "' is the primary outcome");
    auto nd = d.with_outcome(col);
    auto nse = se;
    nse.outcome = col;
    auto r = estimation::estimate(nd, nse, method, cfg);
    bool excluded = !r.difference_ci.contains(0.0);
    out.push_back({col, std::move(r), excluded});
  }
  return out;
}

struct SensitivityReport {
  bool gap_applied = false;
  GapBounds gap;
  Interval shifted_ci;
  EValue e_value;
  std::vector<NegativeControlResult> negative_controls;
  std::string verdict;
};

inline SensitivityReport analyze(const data::Dataset& d, const StatisticalEstimand& se, const EstimateResult& er,
                                 const std::optional<GapBounds>& gap, const std::vector<std::string>& nc_columns,
                                 const EstimatorConfig& cfg = {}) {
  SensitivityReport rep;
  rep.e_value = e_value(er);
  if (gap) {
    rep.gap = *gap;
    rep.shifted_ci = shifted_interval(er, *gap);
    rep.gap_applied = true;
  }
  rep.negative_controls = negative_control_check(d, se, nc_columns, er.method, cfg);

  std::string v;
  if (rep.gap_applied) {
    v = rep.shifted_ci.contains(0.0) ? "null not excluded once the causal gap is allowed for"
                                     : "null excluded even allowing for the causal gap";
  } else {
    v = "no causal gap bounds supplied";
  }
  std::size_t flagged = 0;
  for (const auto& nc : rep.negative_controls) flagged += nc.null_excluded;
  if (!rep.negative_controls.empty())
    v += "; " + std::to_string(flagged) + " of " + std::to_string(rep.negative_controls.size()) +
         " negative controls exclude the null";
  rep.verdict = v;
  return rep;
}

}  // namespace roadmap::sensitivity
