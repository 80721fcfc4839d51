#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "roadmap/estimation.hpp"

using namespace roadmap;
using namespace roadmap::estimation;
using roadmap::data::Dataset;
using roadmap::data::Schema;

namespace {

StatisticalEstimand estimand_for(std::vector<std::string> z, Contrast c = Contrast::risk_difference,
                                 std::optional<std::string> cens = "C") {
  return {std::move(z), c, "A", "Y", std::move(cens)};
}

Dataset worked() {
  std::istringstream in("W,A,C,Y\n0,0,0,0\n0,0,0,0\n0,1,0,1\n0,1,0,0\n1,0,0,1\n1,0,0,0\n1,1,0,1\n1,1,0,1\n");
  return data::parse_dataset(in, Schema{"A", "Y", "C", {"W"}});
}

// Saturated nuisance fits: a histogram with one bin per binary level and no
// truncation of outcome predictions.
EstimatorConfig saturated(int folds = 2) {
  EstimatorConfig cfg;
  cfg.super_learner = {{{LearnerKind::stratified_histogram, 2}}, folds, 7};
  cfg.outcome_bounds = {0.0, 1.0};
  cfg.bootstrap_resamples = 20;
  return cfg;
}

// Independent oracle: sum over strata of P(Z=z) * (mean Y | A=1, z) - (mean Y | A=0, z).
double stratified_means(const Dataset& d, const std::vector<std::string>& z) {
  std::map<std::vector<double>, std::array<double, 5>> cells;  // n, s1, n1, s0, n0
  const auto& a = d.treatment();
  const auto& y = d.outcome();
  for (std::size_t i = 0; i < d.n(); ++i) {
    std::vector<double> key;
    for (const auto& c : z) key.push_back(d.column(c)[i]);
    auto& cell = cells[key];
    cell[0] += 1;
    if (a[i] == 1) {
      cell[1] += y[i];
      cell[2] += 1;
    } else {
      cell[3] += y[i];
      cell[4] += 1;
    }
  }
  double psi = 0;
  for (const auto& [key, c] : cells) psi += c[0] / static_cast<double>(d.n()) * (c[1] / c[2] - c[3] / c[4]);
  return psi;
}

Dataset make(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols,
             std::optional<std::string> cens = "C", std::vector<std::string> req = {}) {
  return Dataset(names, cols, Schema{"A", "Y", std::move(cens), std::move(req)});
}

// W1, W2 binary confounders; optional informative censoring through W1.
Dataset simulate(std::mt19937_64& rng, int n, bool censor, double effect = 1.0) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> cols(5);
  for (int i = 0; i < n; ++i) {
    double w1 = u(rng) < 0.5, w2 = u(rng) < 0.4;
    double a = u(rng) < expit(-0.3 + 0.8 * w1 - 0.5 * w2);
    double c = censor ? (u(rng) < expit(-2.0 + 1.0 * w1 + 0.5 * a)) : 0.0;
    double y = u(rng) < expit(-1.0 + effect * a + 1.0 * w1 - 0.7 * w2);
    cols[0].push_back(w1);
    cols[1].push_back(w2);
    cols[2].push_back(a);
    cols[3].push_back(c);
    cols[4].push_back(c == 1 ? data::kMissing : y);
  }
  return make({"W1", "W2", "A", "C", "Y"}, cols);
}

// Exact risk difference for simulate(): enumerate (W1, W2).
double simulate_truth(double effect = 1.0) {
  double psi = 0;
  for (int w1 = 0; w1 < 2; ++w1)
    for (int w2 = 0; w2 < 2; ++w2) {
      double pw = 0.5 * (w2 ? 0.4 : 0.6);
      psi += pw * (expit(-1.0 + effect + w1 - 0.7 * w2) - expit(-1.0 + w1 - 0.7 * w2));
    }
  return psi;
}

void expect_score_solved(const EstimateResult& r) {
  if (r.method != Method::tmle) return;
  EXPECT_TRUE(score_equation_solved(r.nuisance.ic_mean, r.nuisance.ic_sd))
      << "mean IC " << r.nuisance.ic_mean << " sd " << r.nuisance.ic_sd;
}

}  // namespace

TEST(Estimate, WorkedDatasetSaturatedEquivalence) {
  auto d = worked();
  auto se = estimand_for({"W"});
  const double oracle = stratified_means(d, {"W"});
  EXPECT_NEAR(oracle, 0.5, 1e-15);
  for (auto m : {Method::gcomp, Method::ipw, Method::tmle}) {
    auto r = estimate(d, se, m, saturated());
    EXPECT_NEAR(r.point, oracle, 1e-10) << to_string(m);
    expect_score_solved(r);
  }
}

TEST(Estimate, WorkedDatasetUnadjusted) {
  auto r = estimate(worked(), estimand_for({"W"}), Method::unadjusted);
  EXPECT_DOUBLE_EQ(r.risk1, 0.75);
  EXPECT_DOUBLE_EQ(r.risk0, 0.25);
  EXPECT_DOUBLE_EQ(r.point, 0.5);
  EXPECT_NEAR(r.se, std::sqrt(0.75 * 0.25 / 4 * 2), 1e-15);
}

TEST(Estimate, SaturatedTmleDoesNotMove) {
  auto r = estimate(worked(), estimand_for({"W"}), Method::tmle, saturated());
  ASSERT_EQ(r.nuisance.fluctuation_epsilon.size(), 1u);
  EXPECT_NEAR(r.nuisance.fluctuation_epsilon[0], 0.0, 1e-8);
  EXPECT_NEAR(r.point, 0.5, 1e-12);
}

// Property: on discrete data with every (stratum, arm) cell populated and no
// censoring, the three adjusted estimators reproduce the stratified means.
TEST(Estimate, SaturatedEquivalenceProperty) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 60 + 20 * (trial % 5);
    std::vector<std::vector<double>> cols(5);
    for (int i = 0; i < n; ++i) {
      double w1 = i % 2, w2 = (i / 2) % 3;
      const int block = i / 6;
      double a = block == 1 ? 0 : block % 2 == 0 ? 1 : (u(rng) < 0.4);
      double y = u(rng) < expit(-0.5 + a - 0.4 * w1 + 0.3 * w2 + 0.2 * a * w2);
      cols[0].push_back(w1);
      cols[1].push_back(w2);
      cols[2].push_back(a);
      cols[3].push_back(0);
      cols[4].push_back(y);
    }
    auto d = make({"W1", "W2", "A", "C", "Y"}, cols);
    const double oracle = stratified_means(d, {"W1", "W2"});
    auto cfg = saturated(5);
    cfg.super_learner.library = {{LearnerKind::stratified_histogram, 3}};
    for (auto m : {Method::gcomp, Method::ipw, Method::tmle}) {
      auto r = estimate(d, estimand_for({"W1", "W2"}), m, cfg);
      EXPECT_NEAR(r.point, oracle, 1e-10) << to_string(m) << " trial " << trial;
      expect_score_solved(r);
    }
  }
}

TEST(Estimate, TmleScoreEquationWithDefaultLibrary) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    auto d = simulate(rng, 400, trial % 2 == 1);
    for (auto c : {Contrast::risk_difference, Contrast::risk_ratio}) {
      EstimatorConfig cfg;
      cfg.super_learner.seed = static_cast<std::uint64_t>(trial);
      auto r = estimate(d, estimand_for({"W1", "W2"}, c), Method::tmle, cfg);
      expect_score_solved(r);
      EXPECT_LE(r.ci95.lo, r.point);
      EXPECT_GE(r.ci95.hi, r.point);
    }
  }
}

TEST(Estimate, RiskRatioEqualsRatioOfArmRisks) {
  std::mt19937_64 rng(9);
  auto d = simulate(rng, 500, true);
  EstimatorConfig cfg;
  cfg.bootstrap_resamples = 20;
  for (auto m : {Method::unadjusted, Method::gcomp, Method::ipw, Method::tmle}) {
    auto r = estimate(d, estimand_for({"W1", "W2"}, Contrast::risk_ratio), m, cfg);
    EXPECT_NEAR(r.point, r.risk1 / r.risk0, 1e-12) << to_string(m);
    EXPECT_NEAR(r.ci95.lo, r.point * std::exp(-kZ975 * r.se), 1e-12);
    EXPECT_NEAR(r.ci95.hi, r.point * std::exp(kZ975 * r.se), 1e-12);
    expect_score_solved(r);
  }
}

TEST(Estimate, DifferenceIntervalIsSymmetricWald) {
  std::mt19937_64 rng(10);
  auto d = simulate(rng, 300, false);
  EstimatorConfig cfg;
  cfg.bootstrap_resamples = 20;
  for (auto m : {Method::unadjusted, Method::gcomp, Method::ipw, Method::tmle}) {
    auto r = estimate(d, estimand_for({"W1", "W2"}), m, cfg);
    EXPECT_NEAR(r.ci95.lo, r.point - kZ975 * r.se, 1e-12);
    EXPECT_NEAR(r.ci95.hi, r.point + kZ975 * r.se, 1e-12);
    EXPECT_GT(r.se, 0);
    EXPECT_NEAR(r.point, r.risk1 - r.risk0, 1e-15);
  }
}

TEST(Estimate, CensoringWeightedEstimatorsRecoverTruth) {
  std::mt19937_64 rng(12);
  auto d = simulate(rng, 20000, true);
  const double truth = simulate_truth();
  EstimatorConfig cfg;
  for (auto m : {Method::ipw, Method::tmle}) {
    auto r = estimate(d, estimand_for({"W1", "W2"}), m, cfg);
    EXPECT_NEAR(r.point, truth, 4 * r.se) << to_string(m);
    EXPECT_LT(r.se, 0.02);
    ASSERT_EQ(r.nuisance.fits.size(), m == Method::tmle ? 3u : 2u);
    EXPECT_EQ(r.nuisance.fits.back().role, "censoring");
  }
  auto naive = estimate(d, estimand_for({"W1", "W2"}), Method::unadjusted);
  EXPECT_GT(std::abs(naive.point - truth), 4 * naive.se);
}

TEST(Estimate, Determinism) {
  std::mt19937_64 rng(13);
  auto d = simulate(rng, 300, true);
  EstimatorConfig cfg;
  cfg.bootstrap_resamples = 10;
  for (auto m : {Method::gcomp, Method::ipw, Method::tmle}) {
    auto a = estimate(d, estimand_for({"W1", "W2"}), m, cfg);
    auto b = estimate(d, estimand_for({"W1", "W2"}), m, cfg);
    EXPECT_EQ(a.point, b.point);
    EXPECT_EQ(a.se, b.se);
    EXPECT_EQ(a.ci95, b.ci95);
    EXPECT_EQ(a.nuisance.ic_mean, b.nuisance.ic_mean);
  }
}

TEST(Estimate, DegenerateVarianceCollapsesInterval) {
  auto d = make({"A", "C", "Y"}, {{0, 0, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  auto r = estimate(d, estimand_for({}), Method::unadjusted);
  EXPECT_TRUE(r.degenerate_variance);
  EXPECT_EQ(r.se, 0.0);
  EXPECT_EQ(r.ci95, (Interval{0.0, 0.0}));
}

TEST(Estimate, Errors) {
  auto all_treated = make({"A", "C", "Y"}, {{1, 1, 1, 0}, {0, 0, 0, 1}, {1, 0, 1, data::kMissing}});
  EXPECT_THROW(estimate(all_treated, estimand_for({}), Method::unadjusted), DomainError);
  auto hole = make({"A", "C", "Y"}, {{1, 0, 1, 0}, {0, 0, 0, 0}, {1, data::kMissing, 1, 0}});
  EXPECT_THROW(estimate(hole, estimand_for({}), Method::unadjusted), DomainError);
  auto d = worked();
  StatisticalEstimand wrong{{"W"}, Contrast::risk_difference, "A", "Q", "C"};
  EXPECT_THROW(estimate(d, wrong, Method::tmle), DomainError);
  EXPECT_THROW(estimate(d, estimand_for({"V"}), Method::tmle), DomainError);
  EstimatorConfig bad;
  bad.propensity_bounds = {0.6, 0.4};
  EXPECT_THROW(estimate(d, estimand_for({"W"}), Method::ipw, bad), DomainError);
  auto zero = make({"A", "C", "Y"}, {{0, 0, 1, 1}, {0, 0, 0, 0}, {0, 0, 1, 0}});
  EXPECT_THROW(estimate(zero, estimand_for({}, Contrast::risk_ratio), Method::unadjusted), DomainError);
}
