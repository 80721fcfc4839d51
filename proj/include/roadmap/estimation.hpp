#pragma once

// Estimators of the adjusted arm risks E_Z[P(Y*=1 | C=0, A=a, Z)]:
// unadjusted, g-computation, inverse probability weighting and TMLE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "roadmap/common.hpp"
#include "roadmap/dataset.hpp"
#include "roadmap/estimand.hpp"
#include "roadmap/learners.hpp"

namespace roadmap::estimation {

using data::Dataset;
using estimand::Contrast;
using estimand::StatisticalEstimand;

enum class Method { unadjusted, gcomp, ipw, tmle };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::unadjusted: return "unadjusted";
    case Method::gcomp: return "gcomp";
    case Method::ipw: return "ipw";
    case Method::tmle: break;
  }
  return "tmle";
}

inline std::optional<Method> method_from_string(std::string_view s) {
  for (auto m : {Method::unadjusted, Method::gcomp, Method::ipw, Method::tmle})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

struct Interval {
  double lo = 0;
  double hi = 0;

  bool contains(double v) const { return lo <= v && v <= hi; }
  double width() const { return hi - lo; }
  bool operator==(const Interval&) const = default;
};

struct EstimatorConfig {
  // folds == 0 picks V per fit: 10, or 5 when the fit has fewer than 100 rows.
  SuperLearnerSpec super_learner{SuperLearnerSpec::default_library(), 0, 1};
  Interval propensity_bounds{0.025, 0.975};
  Interval outcome_bounds{0.005, 0.995};
  int bootstrap_resamples = 200;

  void validate() const {
    if (super_learner.folds == 1 || super_learner.folds < 0) throw DomainError("super learner folds must be 0 (auto) or >= 2");
    if (!(propensity_bounds.lo > 0 && propensity_bounds.lo < propensity_bounds.hi && propensity_bounds.hi < 1))
      throw DomainError("propensity bounds must satisfy 0 < lo < hi < 1");
    if (!(outcome_bounds.lo >= 0 && outcome_bounds.lo < outcome_bounds.hi && outcome_bounds.hi <= 1))
      throw DomainError("outcome bounds must satisfy 0 <= lo < hi <= 1");
    if (bootstrap_resamples < 2) throw DomainError("bootstrap needs at least 2 resamples");
  }
};

struct NuisanceFit {
  std::string role;  // outcome | propensity | censoring
  std::string selected;
  std::vector<std::string> learners;
  std::vector<double> cv_risk;
  bool fell_back = false;
};

struct NuisanceDiagnostics {
  std::vector<NuisanceFit> fits;
  // Estimated influence curve of the headline contrast (IC-based estimators).
  double ic_mean = 0;
  double ic_sd = 0;
  std::vector<double> fluctuation_epsilon;  // tmle: one entry (difference) or two (ratio: arm 1, arm 0)
  Interval propensity_bounds;
  std::size_t propensity_truncated = 0;
  int bootstrap_resamples = 0;
  int bootstrap_failures = 0;
};

struct EstimateResult {
  Method method = Method::tmle;
  Contrast contrast = Contrast::risk_difference;
  double point = 0;
  double se = 0;  // on the log scale for risk_ratio
  Interval ci95;
  double risk1 = 0;
  double risk0 = 0;
  // Both scales are always reported; the headline fields above repeat one of them.
  double difference_se = 0;
  Interval difference_ci;
  double log_ratio_se = 0;
  Interval ratio_ci;
  bool degenerate_variance = false;
  std::size_t n = 0;
  std::size_t n_uncensored = 0;
  NuisanceDiagnostics nuisance;

  std::string estimator() const { return std::string(to_string(method)); }

  // Whether the 95% CI excludes the null (0 for differences, 1 for ratios).
  bool excludes_null() const {
    double null_value = contrast == Contrast::risk_difference ? 0.0 : 1.0;
    return !ci95.contains(null_value);
  }
};

// |mean IC| <= 1e-8 sd(IC) + 1e-12
inline bool score_equation_solved(double ic_mean, double ic_sd) {
  return std::abs(ic_mean) <= 1e-8 * ic_sd + 1e-12;
}

namespace detail {

struct Prepared {
  std::size_t n = 0;
  Vector a, c, y;  // y is 0 where censored
  Matrix z;
  std::vector<std::size_t> uncensored;
};

inline Prepared prepare(const Dataset& d, const StatisticalEstimand& se) {
  if (d.schema().treatment != se.treatment)
    throw DomainError("dataset treatment column '" + d.schema().treatment + "' differs from estimand treatment '" +
                      se.treatment + "'");
  if (d.schema().outcome != se.outcome)
    throw DomainError("dataset outcome column '" + d.schema().outcome + "' differs from estimand outcome '" +
                      se.outcome + "'");
  for (const auto& col : se.adjustment_set)
    if (!d.has_column(col)) throw DomainError("adjustment column '" + col + "' is not in the dataset");
  Prepared p;
  p.n = d.n();
  const auto N = static_cast<Eigen::Index>(p.n);
  p.a = Vector(N);
  p.c = Vector(N);
  p.y = Vector(N);
  const auto& a = d.treatment();
  const auto c = d.censoring();
  const auto& y = d.outcome();
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    p.a[k] = a[i];
    p.c[k] = c[i];
    if (c[i] == 0) {
      if (data::is_missing(y[i]))
        throw DomainError("row " + std::to_string(i + 1) + " is uncensored but its outcome is missing");
      p.y[k] = y[i];
      p.uncensored.push_back(i);
    } else {
      p.y[k] = 0;
    }
  }
  p.z = data::feature_matrix(d, se.adjustment_set);
  return p;
}

inline Prepared resample(const Prepared& src, const std::vector<std::size_t>& rows) {
  Prepared p;
  p.n = rows.size();
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  p.a = src.a(idx);
  p.c = src.c(idx);
  p.y = src.y(idx);
  p.z = src.z(idx, Eigen::all);
  for (std::size_t i = 0; i < p.n; ++i)
    if (p.c[static_cast<Eigen::Index>(i)] == 0) p.uncensored.push_back(i);
  return p;
}

inline void require_both_arms(const Prepared& p) {
  std::size_t treated = 0;
  for (auto i : p.uncensored) treated += p.a[static_cast<Eigen::Index>(i)] == 1;
  if (treated == 0) throw DomainError("no uncensored rows in the treated arm (A=1)");
  if (treated == p.uncensored.size()) throw DomainError("no uncensored rows in the control arm (A=0)");
}

inline Matrix with_treatment(const Matrix& z, const Vector& a) {
  Matrix x(z.rows(), z.cols() + 1);
  x.col(0) = a;
  x.rightCols(z.cols()) = z;
  return x;
}

inline Matrix with_treatment(const Matrix& z, double a) {
  return with_treatment(z, Vector::Constant(z.rows(), a));
}

inline SuperLearnerSpec resolve(SuperLearnerSpec spec, std::size_t rows, std::uint64_t stream) {
  if (spec.folds == 0) spec.folds = rows < 100 ? 5 : 10;
  spec.seed = derive_seed(spec.seed, stream);
  return spec;
}

inline NuisanceFit describe(const char* role, const Selection& s) {
  return {role, s.names[s.winner], s.names, s.cv_risk, s.predictor.fell_back()};
}

struct OutcomeFit {
  Vector q1, q0, qa;  // all rows: Q(1,Z), Q(0,Z), Q(A,Z)
  NuisanceFit info;
};

inline OutcomeFit fit_outcome(const Prepared& p, const EstimatorConfig& cfg) {
  std::vector<Eigen::Index> rows(p.uncensored.begin(), p.uncensored.end());
  Matrix x = with_treatment(p.z(rows, Eigen::all), Vector(p.a(rows)));
  Vector y = p.y(rows);
  FitOptions opt;
  opt.lower = cfg.outcome_bounds.lo;
  opt.upper = cfg.outcome_bounds.hi;
  auto sel = cv_select(resolve(cfg.super_learner, rows.size(), 1), x, y, Vector::Ones(x.rows()), opt);
  OutcomeFit f;
  f.q1 = sel.predictor.predict(with_treatment(p.z, 1.0));
  f.q0 = sel.predictor.predict(with_treatment(p.z, 0.0));
  f.qa = sel.predictor.predict(with_treatment(p.z, p.a));
  f.info = describe("outcome", sel);
  return f;
}

struct TreatmentFit {
  Vector g1;              // P(A=1 | Z), bounded
  Vector pi1, pi0;        // P(C=0 | A=a, Z), bounded below
  std::size_t truncated = 0;
  std::vector<NuisanceFit> info;
};

inline TreatmentFit fit_treatment(const Prepared& p, const EstimatorConfig& cfg) {
  const auto N = static_cast<Eigen::Index>(p.n);
  TreatmentFit f;
  auto sel = cv_select(resolve(cfg.super_learner, p.n, 2), p.z, p.a, Vector::Ones(N), FitOptions{0.0, 1.0});
  Vector raw = sel.predictor.predict(p.z);
  f.g1 = Vector(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    f.g1[i] = clamp_probability(raw[i], cfg.propensity_bounds.lo, cfg.propensity_bounds.hi);
    f.truncated += f.g1[i] != raw[i];
  }
  f.info.push_back(describe("propensity", sel));

  if (p.uncensored.size() == p.n) {
    f.pi1 = f.pi0 = Vector::Ones(N);
    return f;
  }
  Vector kept = Vector::Ones(N) - p.c;
  auto csel = cv_select(resolve(cfg.super_learner, p.n, 3), with_treatment(p.z, p.a), kept, Vector::Ones(N),
                        FitOptions{0.0, 1.0});
  f.pi1 = csel.predictor.predict(with_treatment(p.z, 1.0))
              .unaryExpr([&](double v) { return std::max(v, cfg.propensity_bounds.lo); });
  f.pi0 = csel.predictor.predict(with_treatment(p.z, 0.0))
              .unaryExpr([&](double v) { return std::max(v, cfg.propensity_bounds.lo); });
  f.info.push_back(describe("censoring", csel));
  return f;
}

inline double mean(const Vector& v) { return v.mean(); }

inline double sample_sd(const Vector& v) {
  if (v.size() < 2) return 0;
  double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

// Fills both scales of `r` from arm risks and their influence curves.
inline void finish_from_ic(EstimateResult& r, double p1, double p0, const Vector& ic1, const Vector& ic0) {
  const double rootn = std::sqrt(static_cast<double>(ic1.size()));
  r.risk1 = p1;
  r.risk0 = p0;
  Vector ic_rd = ic1 - ic0;
  r.difference_se = sample_sd(ic_rd) / rootn;
  if (p1 > 0 && p0 > 0) {
    Vector ic_lr = ic1 / p1 - ic0 / p0;
    r.log_ratio_se = sample_sd(ic_lr) / rootn;
  } else {
    r.log_ratio_se = std::numeric_limits<double>::quiet_NaN();
  }
  const Vector& head = r.contrast == Contrast::risk_difference ? ic_rd : Vector(ic1 / p1 - ic0 / p0);
  r.nuisance.ic_mean = head.mean();
  r.nuisance.ic_sd = sample_sd(head);
}

inline void finish_intervals(EstimateResult& r) {
  const double rd = r.risk1 - r.risk0;
  r.difference_ci = {rd - kZ975 * r.difference_se, rd + kZ975 * r.difference_se};
  if (r.risk1 > 0 && r.risk0 > 0 && std::isfinite(r.log_ratio_se)) {
    const double lr = std::log(r.risk1 / r.risk0);
    r.ratio_ci = {std::exp(lr - kZ975 * r.log_ratio_se), std::exp(lr + kZ975 * r.log_ratio_se)};
  } else {
    r.ratio_ci = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  }
  if (r.contrast == Contrast::risk_difference) {
    r.point = rd;
    r.se = r.difference_se;
    r.ci95 = r.difference_ci;
  } else {
    if (!(r.risk1 > 0 && r.risk0 > 0))
      throw DomainError("risk ratio undefined: an estimated arm risk is zero");
    r.point = r.risk1 / r.risk0;
    r.se = r.log_ratio_se;
    r.ci95 = r.ratio_ci;
  }
  if (!(r.se > 0)) {
    r.degenerate_variance = true;
    r.se = 0;
    r.ci95 = {r.point, r.point};
  }
}

// Solves sum_i h_i (y_i - expit(offset_i + eps h_i)) = 0 by damped Newton
// on the logistic log-likelihood.
inline double solve_fluctuation(const Vector& offset, const Vector& h, const Vector& y) {
  auto evaluate = [&](double eps, double& score, double& info, double& loglik) {
    score = info = loglik = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double p = expit(offset[i] + eps * h[i]);
      score += h[i] * (y[i] - p);
      info += h[i] * h[i] * p * (1 - p);
      if (y[i] > 0) loglik += std::log(p);
      else loglik += std::log1p(-p);
    }
  };
  double eps = 0, score, info, loglik;
  evaluate(eps, score, info, loglik);
  const double scale = h.cwiseAbs().sum() + 1;
  for (int it = 0; it < 100; ++it) {
    if (std::abs(score) <= 1e-14 * scale) return eps;
    if (!(info > 0) || !std::isfinite(loglik)) break;
    double step = score / info;
    double s2, i2, l2;
    for (int half = 0; half < 60; ++half) {
      evaluate(eps + step, s2, i2, l2);
      if (std::isfinite(l2) && l2 >= loglik - 1e-12 * std::abs(loglik)) break;
      step *= 0.5;
    }
    if (eps + step == eps) return eps;
    eps += step;
    score = s2;
    info = i2;
    loglik = l2;
  }
  if (std::abs(score) <= 1e-10 * scale) return eps;
  throw DomainError("TMLE fluctuation did not converge");
}

struct ArmRisks {
  double p1, p0;
};

inline ArmRisks gcomp_risks(const Prepared& p, const EstimatorConfig& cfg, OutcomeFit* out = nullptr) {
  require_both_arms(p);
  auto q = fit_outcome(p, cfg);
  ArmRisks r{mean(q.q1), mean(q.q0)};
  if (out) *out = std::move(q);
  return r;
}

inline EstimateResult unadjusted(const Prepared& p, EstimateResult r) {
  require_both_arms(p);
  double s1 = 0, s0 = 0, n1 = 0, n0 = 0;
  for (auto i : p.uncensored) {
    auto k = static_cast<Eigen::Index>(i);
    if (p.a[k] == 1) {
      s1 += p.y[k];
      n1 += 1;
    } else {
      s0 += p.y[k];
      n0 += 1;
    }
  }
  r.risk1 = s1 / n1;
  r.risk0 = s0 / n0;
  r.difference_se = std::sqrt(r.risk1 * (1 - r.risk1) / n1 + r.risk0 * (1 - r.risk0) / n0);
  r.log_ratio_se = (r.risk1 > 0 && r.risk0 > 0)
                       ? std::sqrt((1 - r.risk1) / (n1 * r.risk1) + (1 - r.risk0) / (n0 * r.risk0))
                       : std::numeric_limits<double>::quiet_NaN();
  finish_intervals(r);
  return r;
}

inline EstimateResult gcomp(const Prepared& p, const EstimatorConfig& cfg, EstimateResult r) {
  OutcomeFit q;
  auto risks = gcomp_risks(p, cfg, &q);
  r.nuisance.fits.push_back(q.info);
  r.risk1 = risks.p1;
  r.risk0 = risks.p0;

  std::vector<double> rd, lr;
  for (int b = 0; b < cfg.bootstrap_resamples; ++b) {
    std::mt19937_64 rng(derive_seed(cfg.super_learner.seed, 0xb007, static_cast<std::uint64_t>(b)));
    std::vector<std::size_t> rows(p.n);
    for (auto& row : rows) row = static_cast<std::size_t>(rng() % p.n);
    try {
      auto br = gcomp_risks(resample(p, rows), cfg);
      rd.push_back(br.p1 - br.p0);
      if (br.p1 > 0 && br.p0 > 0) lr.push_back(std::log(br.p1 / br.p0));
    } catch (const Error&) {
      ++r.nuisance.bootstrap_failures;
    }
  }
  r.nuisance.bootstrap_resamples = cfg.bootstrap_resamples;
  if (rd.size() < 2) throw DomainError("g-computation bootstrap failed on nearly every resample");
  r.difference_se = sample_sd(Eigen::Map<Vector>(rd.data(), static_cast<Eigen::Index>(rd.size())));
  r.log_ratio_se = lr.size() >= 2 ? sample_sd(Eigen::Map<Vector>(lr.data(), static_cast<Eigen::Index>(lr.size())))
                                  : std::numeric_limits<double>::quiet_NaN();
  finish_intervals(r);
  return r;
}

inline EstimateResult ipw(const Prepared& p, const EstimatorConfig& cfg, EstimateResult r) {
  require_both_arms(p);
  auto t = fit_treatment(p, cfg);
  r.nuisance.fits = t.info;
  r.nuisance.propensity_truncated = t.truncated;
  const auto N = static_cast<Eigen::Index>(p.n);
  Vector term1(N), term0(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const bool kept = p.c[i] == 0;
    term1[i] = kept && p.a[i] == 1 ? p.y[i] / (t.g1[i] * t.pi1[i]) : 0.0;
    term0[i] = kept && p.a[i] == 0 ? p.y[i] / ((1 - t.g1[i]) * t.pi0[i]) : 0.0;
  }
  double p1 = term1.mean(), p0 = term0.mean();
  Vector ic1 = term1.array() - p1, ic0 = term0.array() - p0;
  finish_from_ic(r, p1, p0, ic1, ic0);
  finish_intervals(r);
  return r;
}

inline EstimateResult tmle(const Prepared& p, const EstimatorConfig& cfg, EstimateResult r) {
  require_both_arms(p);
  auto q = fit_outcome(p, cfg);
  auto t = fit_treatment(p, cfg);
  r.nuisance.fits.push_back(q.info);
  for (auto& f : t.info) r.nuisance.fits.push_back(f);
  r.nuisance.propensity_truncated = t.truncated;

  const auto N = static_cast<Eigen::Index>(p.n);
  Vector h1(N), h0(N);  // clever covariate at A=1 (positive) and A=0 (negative)
  for (Eigen::Index i = 0; i < N; ++i) {
    h1[i] = 1.0 / (t.g1[i] * t.pi1[i]);
    h0[i] = -1.0 / ((1 - t.g1[i]) * t.pi0[i]);
  }
  std::vector<Eigen::Index> rows(p.uncensored.begin(), p.uncensored.end());
  Vector y = p.y(rows);
  Vector offset = q.qa(rows).unaryExpr([](double v) { return logit(v); });
  Vector ha(N);
  for (Eigen::Index i = 0; i < N; ++i) ha[i] = p.a[i] == 1 ? h1[i] : h0[i];

  auto update = [](const Vector& qbar, const Vector& h, double eps) {
    Vector out(qbar.size());
    for (Eigen::Index i = 0; i < qbar.size(); ++i) out[i] = expit(logit(qbar[i]) + eps * h[i]);
    return out;
  };
  // Residual term of the arm-a influence curve: I(A=a) I(C=0) |H| (Y - Q*(a,Z)).
  auto residual_term = [&](int arm, const Vector& qstar_arm, const Vector& h) {
    Vector out = Vector::Zero(N);
    for (auto i : p.uncensored) {
      auto k = static_cast<Eigen::Index>(i);
      if (p.a[k] == arm) out[k] = std::abs(h[k]) * (p.y[k] - qstar_arm[k]);
    }
    return out;
  };

  Vector q1s, q0s;
  if (r.contrast == Contrast::risk_difference) {
    double eps = solve_fluctuation(offset, Vector(ha(rows)), y);
    r.nuisance.fluctuation_epsilon = {eps};
    q1s = update(q.q1, h1, eps);
    q0s = update(q.q0, h0, eps);
  } else {
    // Each arm risk is targeted with its own one-dimensional fluctuation.
    Vector h1a(N), h0a(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      h1a[i] = p.a[i] == 1 ? h1[i] : 0.0;
      h0a[i] = p.a[i] == 0 ? -h0[i] : 0.0;
    }
    double e1 = solve_fluctuation(offset, Vector(h1a(rows)), y);
    double e0 = solve_fluctuation(offset, Vector(h0a(rows)), y);
    r.nuisance.fluctuation_epsilon = {e1, e0};
    q1s = update(q.q1, h1, e1);
    q0s = update(q.q0, Vector(-h0), e0);
  }
  double p1 = q1s.mean(), p0 = q0s.mean();
  Vector ic1 = residual_term(1, q1s, h1) + (q1s.array() - p1).matrix();
  Vector ic0 = residual_term(0, q0s, h0) + (q0s.array() - p0).matrix();
  finish_from_ic(r, p1, p0, ic1, ic0);
  if (!score_equation_solved(r.nuisance.ic_mean, r.nuisance.ic_sd))
    throw DomainError("TMLE fluctuation did not solve the efficient score equation");
  finish_intervals(r);
  return r;
}

}  // namespace detail

inline EstimateResult estimate(const Dataset& d, const StatisticalEstimand& se, Method method,
                               const EstimatorConfig& cfg = {}) {
  cfg.validate();
  auto p = detail::prepare(d, se);
  EstimateResult r;
  r.method = method;
  r.contrast = se.contrast;
  r.n = p.n;
  r.n_uncensored = p.uncensored.size();
  r.nuisance.propensity_bounds = cfg.propensity_bounds;
  switch (method) {
    case Method::unadjusted: return detail::unadjusted(p, std::move(r));
    case Method::gcomp: return detail::gcomp(p, cfg, std::move(r));
    case Method::ipw: return detail::ipw(p, cfg, std::move(r));
    case Method::tmle: break;
  }
  return detail::tmle(p, cfg, std::move(r));
}

}  // namespace roadmap::estimation
