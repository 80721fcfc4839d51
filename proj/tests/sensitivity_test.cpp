#include <gtest/gtest.h>

#include <random>

#include "roadmap/sensitivity.hpp"

using namespace roadmap;
using namespace roadmap::sensitivity;

namespace {

EstimateResult rd_result(double lo, double hi) {
  EstimateResult r;
  r.contrast = Contrast::risk_difference;
  r.point = (lo + hi) / 2;
  r.ci95 = {lo, hi};
  return r;
}

EstimateResult arms(double p1, double p0, Interval ratio_ci = {NAN, NAN}) {
  EstimateResult r;
  r.risk1 = p1;
  r.risk0 = p0;
  r.ratio_ci = ratio_ci;
  return r;
}

data::Dataset rct(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> cols(5);
  for (int i = 0; i < n; ++i) {
    double w = u(rng) < 0.5, a = u(rng) < 0.5;
    cols[0].push_back(w);
    cols[1].push_back(a);
    cols[2].push_back(u(rng) < expit(-1 + a + w));
    cols[3].push_back(u(rng) < 0.3);
    cols[4].push_back(a);
  }
  return data::Dataset({"W", "A", "Y", "N", "Acopy"}, cols, data::Schema{"A", "Y", std::nullopt, {"W"}});
}

}  // namespace

TEST(ShiftedInterval, Examples) {
  GapBounds zero{0, 0, "none"};
  EXPECT_EQ(shifted_interval(rd_result(0.02, 0.10), zero), (Interval{0.02, 0.10}));
  auto s = shifted_interval(rd_result(0.02, 0.10), {-0.01, 0.03, "expert elicitation"});
  EXPECT_NEAR(s.lo, -0.01, 1e-15);
  EXPECT_NEAR(s.hi, 0.11, 1e-15);
  auto shift = shifted_interval(rd_result(0.1, 0.3), {0.05, 0.05, "x"});
  EXPECT_NEAR(shift.lo, 0.05, 1e-15);
  EXPECT_NEAR(shift.hi, 0.25, 1e-15);
}

TEST(ShiftedInterval, WidthAndContainmentProperties) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 500; ++i) {
    double a = u(rng), b = u(rng), g = u(rng), h = u(rng);
    auto er = rd_result(std::min(a, b), std::max(a, b));
    GapBounds gb{std::min(g, h), std::max(g, h), "random"};
    auto s = shifted_interval(er, gb);
    EXPECT_NEAR(s.width(), er.ci95.width() + gb.hi - gb.lo, 1e-12);
    if (gb.lo <= 0 && gb.hi >= 0) {
      EXPECT_LE(s.lo, er.ci95.lo);
      EXPECT_GE(s.hi, er.ci95.hi);
    }
  }
}

TEST(ShiftedInterval, Errors) {
  auto er = rd_result(0, 1);
  EXPECT_THROW(shifted_interval(er, {0.1, -0.1, "x"}), DomainError);
  EXPECT_THROW(shifted_interval(er, {0, 0, ""}), DomainError);
  er.contrast = Contrast::risk_ratio;
  try {
    shifted_interval(er, {0, 0, "x"});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("scale mismatch"), std::string::npos);
  }
}

TEST(EValue, ClosedForm) {
  EXPECT_NEAR(e_value(arms(0.4, 0.2)).point, 2 + std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(e_value(arms(0.1, 0.2)).point, 2 + std::sqrt(2.0), 1e-12);
  EXPECT_EQ(e_value(arms(0.3, 0.3)).point, 1.0);
  EXPECT_THROW(e_value(arms(0.3, 0.0)), DomainError);
}

TEST(EValue, ConfidenceLimit) {
  EXPECT_NEAR(e_value(arms(0.4, 0.2, {1.5, 2.5})).ci, 1.5 + std::sqrt(1.5 * 0.5), 1e-12);
  EXPECT_NEAR(e_value(arms(0.1, 0.2, {0.3, 0.8})).ci, e_value_of_ratio(1 / 0.8), 1e-12);
  EXPECT_EQ(e_value(arms(0.4, 0.2, {0.9, 4.0})).ci, 1.0);
}

TEST(EValue, AtLeastOneAndMonotone) {
  double prev = 1;
  for (double lr = 0; lr < 4; lr += 0.01) {
    double e = e_value_of_ratio(std::exp(lr));
    EXPECT_GE(e, 1.0);
    EXPECT_GE(e, prev);
    EXPECT_NEAR(e, e_value_of_ratio(std::exp(-lr)), 1e-9 * e);
    prev = e;
  }
}

TEST(NegativeControl, CanaryAndEmpty) {
  std::mt19937_64 rng(5);
  auto d = rct(rng, 400);
  estimand::StatisticalEstimand se{{"W"}, Contrast::risk_difference, "A", "Y", std::nullopt};
  EXPECT_TRUE(negative_control_check(d, se, {}, Method::tmle).empty());
  auto res = negative_control_check(d, se, {"Acopy"}, Method::unadjusted);
  ASSERT_EQ(res.size(), 1u);
  EXPECT_TRUE(res[0].null_excluded);
  EXPECT_THROW(negative_control_check(d, se, {"Y"}, Method::tmle), DomainError);
  EXPECT_THROW(negative_control_check(d, se, {"missing"}, Method::tmle), DomainError);
}

TEST(NegativeControl, DoesNotAlterPrimaryEstimate) {
  std::mt19937_64 rng(6);
  auto d = rct(rng, 500);
  estimand::StatisticalEstimand se{{"W"}, Contrast::risk_difference, "A", "Y", std::nullopt};
  auto before = estimation::estimate(d, se, Method::tmle);
  auto rep = analyze(d, se, before, GapBounds{-0.02, 0.02, "pilot"}, {"N"});
  auto after = estimation::estimate(d, se, Method::tmle);
  EXPECT_EQ(before.point, after.point);
  EXPECT_EQ(before.ci95, after.ci95);
  ASSERT_EQ(rep.negative_controls.size(), 1u);
  EXPECT_TRUE(estimation::score_equation_solved(rep.negative_controls[0].estimate.nuisance.ic_mean,
                                                rep.negative_controls[0].estimate.nuisance.ic_sd));
  EXPECT_TRUE(rep.gap_applied);
  EXPECT_NE(rep.verdict.find("1 negative controls"), std::string::npos);
}

TEST(NegativeControl, CensoredPrimaryOutcomeIsNotAnError) {
  data::Dataset d({"A", "C", "Y", "N"}, {{0, 0, 1, 1, 0, 1}, {0, 1, 0, 1, 0, 0}, {0, NAN, 1, NAN, 1, 0}, {1, 0, 0, 1, 0, 1}},
                  data::Schema{"A", "Y", "C", {}});
  estimand::StatisticalEstimand se{{}, Contrast::risk_difference, "A", "Y", "C"};
  auto res = negative_control_check(d, se, {"N"}, Method::unadjusted);
  EXPECT_EQ(res[0].estimate.n_uncensored, 4u);
}
