#pragma once

// Probability learners for binary targets and the discrete (winner-take-all)
// cross-validated super learner used for every nuisance fit.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "roadmap/common.hpp"

namespace roadmap::estimation {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LearnerKind { mean_only, logistic_main_terms, logistic_with_pairwise_interactions, stratified_histogram };

inline std::string_view to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::mean_only: return "mean_only";
    case LearnerKind::logistic_main_terms: return "logistic_main_terms";
    case LearnerKind::logistic_with_pairwise_interactions: return "logistic_with_pairwise_interactions";
    case LearnerKind::stratified_histogram: break;
  }
  return "stratified_histogram";
}

inline std::optional<LearnerKind> learner_kind_from_string(std::string_view s) {
  for (auto k : {LearnerKind::mean_only, LearnerKind::logistic_main_terms,
                 LearnerKind::logistic_with_pairwise_interactions, LearnerKind::stratified_histogram})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct LearnerSpec {
  LearnerKind kind = LearnerKind::mean_only;
  int bins = 4;  // stratified_histogram only: equal-width bins per feature

  void validate() const {
    if (kind == LearnerKind::stratified_histogram && bins < 1)
      throw DomainError("stratified_histogram needs bins >= 1");
  }

  std::string name() const {
    std::string n(to_string(kind));
    if (kind == LearnerKind::stratified_histogram) n += "(bins=" + std::to_string(bins) + ")";
    return n;
  }

  bool operator==(const LearnerSpec&) const = default;
};

// Prediction bounds and IRLS controls.
struct FitOptions {
  double lower = 0.005;
  double upper = 0.995;
  double tolerance = 1e-8;
  int max_iterations = 100;
};

namespace detail {

inline Matrix expand(const Matrix& x, bool pairwise) {
  const Eigen::Index n = x.rows(), p = x.cols();
  const Eigen::Index q = 1 + p + (pairwise ? p * (p - 1) / 2 : 0);
  Matrix out(n, q);
  out.col(0).setOnes();
  if (p > 0) out.middleCols(1, p) = x;
  Eigen::Index c = 1 + p;
  if (pairwise)
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index k = j + 1; k < p; ++k) out.col(c++) = x.col(j).cwiseProduct(x.col(k));
  return out;
}

inline double weighted_mean(const Vector& y, const Vector& w) {
  double sw = w.sum();
  if (!(sw > 0)) throw DomainError("learner weights are all zero");
  return y.dot(w) / sw;
}

inline double bernoulli_deviance(const Vector& y, const Vector& mu, const Vector& w) {
  double dev = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double m = std::clamp(mu[i], 1e-300, 1.0 - 1e-16);
    if (y[i] > 0) dev -= w[i] * y[i] * std::log(m);
    if (y[i] < 1) dev -= w[i] * (1 - y[i]) * std::log1p(-m);
  }
  return 2 * dev;
}

}  // namespace detail

struct LogisticFit {
  Vector beta;
  int iterations = 0;
  bool converged = false;
};

// Weighted logistic regression by iteratively reweighted least squares with
// step halving; rank-deficient designs get the minimum-norm solution.
inline LogisticFit fit_logistic(const Matrix& design, const Vector& y, const Vector& w, double tolerance,
                                int max_iterations) {
  const Eigen::Index q = design.cols();
  LogisticFit fit;
  fit.beta = Vector::Zero(q);
  fit.beta[0] = logit(std::clamp(detail::weighted_mean(y, w), 1e-4, 1 - 1e-4));
  Vector eta = design * fit.beta;
  Vector mu = eta.unaryExpr([](double e) { return expit(e); });
  double dev = detail::bernoulli_deviance(y, mu, w);
  Vector working(y.size()), z(y.size());
  for (int it = 1; it <= max_iterations; ++it) {
    fit.iterations = it;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double m = std::clamp(mu[i], 1e-10, 1 - 1e-10);
      double v = m * (1 - m);
      working[i] = w[i] * v;
      z[i] = eta[i] + (y[i] - m) / v;
    }
    Matrix xtwx = design.transpose() * working.asDiagonal() * design;
    Vector xtwz = design.transpose() * working.cwiseProduct(z);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(xtwx);
    cod.setThreshold(1e-12);
    Vector proposal = cod.solve(xtwz);
    Vector step = proposal - fit.beta;
    double new_dev = std::numeric_limits<double>::infinity();
    Vector new_eta, new_mu;
    for (int half = 0; half < 30; ++half) {
      Vector candidate = fit.beta + step;
      new_eta = design * candidate;
      new_mu = new_eta.unaryExpr([](double e) { return expit(e); });
      new_dev = detail::bernoulli_deviance(y, new_mu, w);
      if (std::isfinite(new_dev) && new_dev <= dev * (1 + 1e-12) + 1e-12) {
        fit.beta = candidate;
        break;
      }
      step *= 0.5;
    }
    if (!std::isfinite(new_dev) || !fit.beta.allFinite()) return fit;
    bool done = std::abs(new_dev - dev) / (std::abs(new_dev) + 0.1) < tolerance;
    eta = std::move(new_eta);
    mu = std::move(new_mu);
    dev = new_dev;
    if (done) {
      fit.converged = true;
      return fit;
    }
  }
  return fit;
}

// A fitted learner. Immutable and cheap to copy.
class Predictor {
 public:
  Vector predict(const Matrix& x) const {
    Vector p(x.rows());
    switch (kind_) {
      case LearnerKind::mean_only: p.setConstant(mean_); break;
      case LearnerKind::logistic_main_terms:
      case LearnerKind::logistic_with_pairwise_interactions: {
        Vector eta = detail::expand(x, kind_ == LearnerKind::logistic_with_pairwise_interactions) * beta_;
        p = eta.unaryExpr([](double e) { return expit(e); });
        break;
      }
      case LearnerKind::stratified_histogram:
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          auto it = cells_.find(cell_of(x.row(i)));
          p[i] = it == cells_.end() ? mean_ : it->second;
        }
        break;
    }
    return p.unaryExpr([this](double v) { return clamp_probability(v, lower_, upper_); });
  }

  double predict_one(const Vector& row) const {
    Matrix x(1, row.size());
    x.row(0) = row.transpose();
    return predict(x)[0];
  }

  LearnerKind kind() const noexcept { return kind_; }
  const std::string& learner() const noexcept { return learner_; }
  bool fell_back() const noexcept { return fell_back_; }
  int iterations() const noexcept { return iterations_; }
  const Vector& coefficients() const noexcept { return beta_; }

 private:
  friend Predictor fit_learner(const LearnerSpec&, const Matrix&, const Vector&, const Vector&, const FitOptions&);

  std::vector<int> cell_of(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    std::vector<int> cell(static_cast<std::size_t>(row.size()));
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      double width = widths_[j];
      int b = width > 0 ? static_cast<int>(std::floor((row[j] - mins_[j]) / width)) : 0;
      cell[static_cast<std::size_t>(j)] = std::clamp(b, 0, bins_ - 1);
    }
    return cell;
  }

  LearnerKind kind_ = LearnerKind::mean_only;
  std::string learner_;
  double mean_ = 0.5;
  Vector beta_;
  int bins_ = 1;
  Vector mins_, widths_;
  std::map<std::vector<int>, double> cells_;
  double lower_ = 0, upper_ = 1;
  bool fell_back_ = false;
  int iterations_ = 0;
};

inline Predictor fit_learner(const LearnerSpec& spec, const Matrix& x, const Vector& y, const Vector& w,
                             const FitOptions& opt = {}) {
  spec.validate();
  if (x.rows() < 1) throw DomainError("cannot fit a learner on zero rows");
  if (y.size() != x.rows() || w.size() != x.rows()) throw DomainError("learner inputs have mismatched lengths");
  if ((w.array() < 0).any()) throw DomainError("learner weights must be non-negative");

  Predictor p;
  p.kind_ = spec.kind;
  p.learner_ = spec.name();
  p.lower_ = opt.lower;
  p.upper_ = opt.upper;
  p.mean_ = detail::weighted_mean(y, w);

  switch (spec.kind) {
    case LearnerKind::mean_only: break;
    case LearnerKind::logistic_main_terms:
    case LearnerKind::logistic_with_pairwise_interactions: {
      auto fit = fit_logistic(detail::expand(x, spec.kind == LearnerKind::logistic_with_pairwise_interactions), y, w,
                              opt.tolerance, opt.max_iterations);
      p.iterations_ = fit.iterations;
      if (fit.converged) {
        p.beta_ = std::move(fit.beta);
      } else {
        p.kind_ = LearnerKind::mean_only;
        p.fell_back_ = true;
      }
      break;
    }
    case LearnerKind::stratified_histogram: {
      p.bins_ = spec.bins;
      const Eigen::Index k = x.cols();
      p.mins_ = k > 0 ? Vector(x.colwise().minCoeff().transpose()) : Vector();
      p.widths_ = Vector(k);
      for (Eigen::Index j = 0; j < k; ++j) p.widths_[j] = (x.col(j).maxCoeff() - p.mins_[j]) / spec.bins;
      std::map<std::vector<int>, std::pair<double, double>> acc;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        auto& cell = acc[p.cell_of(x.row(i))];
        cell.first += w[i] * y[i];
        cell.second += w[i];
      }
      for (const auto& [cell, sums] : acc)
        if (sums.second > 0) p.cells_.emplace(cell, sums.first / sums.second);
      break;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Discrete super learner

struct SuperLearnerSpec {
  std::vector<LearnerSpec> library;
  int folds = 10;
  std::uint64_t seed = 1;

  static std::vector<LearnerSpec> default_library() {
    return {{LearnerKind::mean_only},
            {LearnerKind::logistic_main_terms},
            {LearnerKind::logistic_with_pairwise_interactions},
            {LearnerKind::stratified_histogram, 4}};
  }

  // Default library, V = 10 (V = 5 below 100 rows).
  static SuperLearnerSpec defaults(std::size_t n, std::uint64_t seed = 1) {
    return {default_library(), n < 100 ? 5 : 10, seed};
  }

  void validate() const {
    if (library.empty()) throw DomainError("super learner library is empty");
    if (folds < 2) throw DomainError("super learner needs at least 2 folds");
    for (const auto& l : library) l.validate();
  }

  bool operator==(const SuperLearnerSpec&) const = default;
};

struct Selection {
  Predictor predictor;
  std::size_t winner = 0;
  std::vector<std::string> names;
  std::vector<double> cv_risk;
};

// Weighted mean negative log-likelihood.
inline double nll_risk(const Vector& y, const Vector& p, const Vector& w) {
  double loss = 0, sw = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double q = std::clamp(p[i], 1e-12, 1 - 1e-12);
    loss -= w[i] * (y[i] * std::log(q) + (1 - y[i]) * std::log1p(-q));
    sw += w[i];
  }
  return loss / sw;
}

inline std::vector<int> fold_assignment(std::size_t n, int folds, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return fold;
}

inline Selection cv_select(const SuperLearnerSpec& spec, const Matrix& x, const Vector& y, const Vector& w,
                           const FitOptions& opt = {}) {
  spec.validate();
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < static_cast<std::size_t>(spec.folds))
    throw DomainError("super learner needs at least V=" + std::to_string(spec.folds) + " rows, got " +
                      std::to_string(n));
  auto fold = fold_assignment(n, spec.folds, spec.seed);

  Selection sel;
  const std::size_t L = spec.library.size();
  sel.cv_risk.assign(L, 0.0);
  for (const auto& l : spec.library) sel.names.push_back(l.name());
  std::vector<Vector> held(L, Vector::Zero(static_cast<Eigen::Index>(n)));
  std::vector<bool> failed(L, false);

  for (int v = 0; v < spec.folds; ++v) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == v ? test : train).push_back(static_cast<Eigen::Index>(i));
    Matrix xt = x(train, Eigen::all), xv = x(test, Eigen::all);
    Vector yt = y(train), wt = w(train);
    for (std::size_t l = 0; l < L; ++l) {
      if (failed[l]) continue;
      try {
        Vector pv = fit_learner(spec.library[l], xt, yt, wt, opt).predict(xv);
        for (std::size_t t = 0; t < test.size(); ++t) held[l][test[t]] = pv[static_cast<Eigen::Index>(t)];
      } catch (const Error&) {
        failed[l] = true;
      }
    }
  }
  for (std::size_t l = 0; l < L; ++l)
    sel.cv_risk[l] = failed[l] ? std::numeric_limits<double>::infinity() : nll_risk(y, held[l], w);

  sel.winner = 0;
  for (std::size_t l = 1; l < L; ++l)
    if (sel.cv_risk[l] < sel.cv_risk[sel.winner]) sel.winner = l;
  if (!std::isfinite(sel.cv_risk[sel.winner])) throw DomainError("every learner in the library failed");
  for (double r : sel.cv_risk)
    if (sel.cv_risk[sel.winner] > r) throw Error("internal: super learner winner is not the CV-risk minimizer");
  sel.predictor = fit_learner(spec.library[sel.winner], x, y, w, opt);
  return sel;
}

}  // namespace roadmap::estimation
