#pragma once

// Observed data (W, A, C, Y*) and the fit-for-use / positivity diagnostics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "roadmap/common.hpp"
#include "roadmap/learners.hpp"

namespace roadmap::data {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

struct Schema {
  std::string treatment;
  std::string outcome;
  std::optional<std::string> censoring;
  std::vector<std::string> required;  // covariates and anything else that must be present

  bool operator==(const Schema&) const = default;
};

class Dataset {
 public:
  Dataset() = default;

  // Validates roles and values; throws DomainError naming row and column.
  Dataset(std::vector<std::string> names, std::vector<std::vector<double>> columns, Schema schema)
      : names_(std::move(names)), columns_(std::move(columns)), schema_(std::move(schema)) {
    validate();
  }

  std::size_t n() const noexcept { return n_; }
  const Schema& schema() const noexcept { return schema_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  bool has_column(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  const std::vector<double>& column(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw DomainError("dataset has no column '" + std::string(name) + "'");
    return columns_[it->second];
  }

  const std::vector<double>& treatment() const { return column(schema_.treatment); }
  const std::vector<double>& outcome() const { return column(schema_.outcome); }

  // Censoring indicator; identically zero when the schema has no censoring column.
  std::vector<double> censoring() const {
    if (!schema_.censoring) return std::vector<double>(n_, 0.0);
    return column(*schema_.censoring);
  }

  // Same data with a different column playing the outcome role.
  Dataset with_outcome(const std::string& name) const {
    Schema s = schema_;
    s.outcome = name;
    return Dataset(names_, columns_, std::move(s));
  }

  bool operator==(const Dataset& o) const {
    if (names_ != o.names_ || schema_ != o.schema_ || n_ != o.n_) return false;
    for (std::size_t c = 0; c < columns_.size(); ++c)
      for (std::size_t i = 0; i < n_; ++i) {
        double a = columns_[c][i], b = o.columns_[c][i];
        if (!(a == b || (is_missing(a) && is_missing(b)))) return false;
      }
    return true;
  }

 private:
  void validate() {
    if (names_.size() != columns_.size()) throw DomainError("dataset has mismatched column names and data");
    if (columns_.empty() || columns_.front().empty()) throw DomainError("dataset has no rows");
    n_ = columns_.front().size();
    index_.clear();
    for (std::size_t c = 0; c < names_.size(); ++c) {
      if (!index_.emplace(names_[c], c).second) throw DomainError("duplicate column '" + names_[c] + "'");
      if (columns_[c].size() != n_) throw DomainError("column '" + names_[c] + "' has the wrong length");
    }
    auto need = [&](const std::string& name, const char* role) {
      if (!index_.count(name)) throw DomainError(std::string("missing ") + role + " column '" + name + "'");
    };
    need(schema_.treatment, "treatment");
    need(schema_.outcome, "outcome");
    if (schema_.censoring) need(*schema_.censoring, "censoring");
    for (const auto& r : schema_.required) need(r, "required");

    for (std::size_t c = 0; c < names_.size(); ++c) {
      const auto& name = names_[c];
      const bool is_outcome = name == schema_.outcome;
      const bool binary = name == schema_.treatment || (schema_.censoring && name == *schema_.censoring);
      const bool complete =
          binary || std::find(schema_.required.begin(), schema_.required.end(), name) != schema_.required.end();
      for (std::size_t i = 0; i < n_; ++i) {
        double v = columns_[c][i];
        auto where = [&] { return "row " + std::to_string(i + 1) + ", column '" + name + "'"; };
        if (is_missing(v)) {
          if (complete) throw DomainError(where() + ": missing value in a treatment, censoring or covariate column");
          continue;
        }
        if (!std::isfinite(v)) throw DomainError(where() + ": non-finite value");
        if ((binary || is_outcome) && v != 0 && v != 1) {
          std::ostringstream msg;
          msg << where() << ": value " << v << " is not 0/1";
          throw DomainError(msg.str());
        }
      }
    }
  }

  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  Schema schema_;
  std::size_t n_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Delimited text I/O

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string format_number(double v) {
  if (is_missing(v)) return "NA";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace detail

inline Dataset parse_dataset(std::istream& in, const Schema& schema, std::string_view source = "<input>") {
  std::string line;
  if (!std::getline(in, line)) throw DomainError(std::string(source) + ": empty file (no header row)");
  std::vector<std::string> names;
  for (auto h : detail::split(line)) names.emplace_back(h);
  std::vector<std::vector<double>> columns(names.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split(line);
    if (cells.size() != names.size())
      throw DomainError(std::string(source) + ": line " + std::to_string(lineno) + " has " +
                        std::to_string(cells.size()) + " fields, header has " + std::to_string(names.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto cell = cells[c];
      if (cell.empty() || cell == "NA") {
        columns[c].push_back(kMissing);
        continue;
      }
      double v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw DomainError(std::string(source) + ": line " + std::to_string(lineno) + ", column '" + names[c] +
                          "': cannot parse '" + std::string(cell) + "' as a number");
      columns[c].push_back(v);
    }
  }
  if (columns.empty() || columns.front().empty()) throw DomainError(std::string(source) + ": no data rows (n = 0)");
  return Dataset(std::move(names), std::move(columns), schema);
}

inline Dataset load_dataset(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open data file '" + path + "'");
  return parse_dataset(in, schema, path);
}

// Canonical serialization: header, then shortest round-trip numbers, NA for missing.
inline std::string to_csv(const Dataset& d) {
  std::string out;
  for (std::size_t c = 0; c < d.names().size(); ++c) out += (c ? "," : "") + d.names()[c];
  out += '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t c = 0; c < d.names().size(); ++c)
      out += (c ? "," : "") + detail::format_number(d.column(d.names()[c])[i]);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct MissingnessSummary {
  std::size_t n = 0;
  std::vector<std::pair<std::string, double>> missing_fraction;  // per column, file order
  // Cross-tab of censoring (rows) against outcome missingness (columns).
  std::size_t uncensored_observed = 0;
  std::size_t uncensored_missing = 0;
  std::size_t censored_observed = 0;
  std::size_t censored_missing = 0;
  // Rows with C = 0 but no outcome recorded.
  std::size_t inconsistent_rows = 0;
};

inline MissingnessSummary missingness_summary(const Dataset& d) {
  MissingnessSummary s;
  s.n = d.n();
  for (const auto& name : d.names()) {
    const auto& col = d.column(name);
    auto missing = std::count_if(col.begin(), col.end(), [](double v) { return is_missing(v); });
    s.missing_fraction.emplace_back(name, static_cast<double>(missing) / static_cast<double>(d.n()));
  }
  auto c = d.censoring();
  const auto& y = d.outcome();
  for (std::size_t i = 0; i < d.n(); ++i) {
    bool miss = is_missing(y[i]);
    if (c[i] == 0) {
      (miss ? s.uncensored_missing : s.uncensored_observed)++;
    } else {
      (miss ? s.censored_missing : s.censored_observed)++;
    }
  }
  s.inconsistent_rows = s.uncensored_missing;
  return s;
}

inline constexpr double kDefaultPositivityThreshold = 0.025;

struct PositivityStratum {
  std::string key;  // e.g. "W=1,V=0"
  std::size_t n = 0;
  std::size_t treated = 0;
  double proportion = 0;
  bool flagged = false;
};

struct PositivityReport {
  double threshold = kDefaultPositivityThreshold;
  std::string learner;
  double propensity_min = 0;
  double propensity_max = 0;
  double fraction_below = 0;  // P(A=1|Z) < threshold
  double fraction_above = 0;  // P(A=1|Z) > 1 - threshold
  bool discrete = false;      // strata populated only when every Z column is discrete
  std::vector<PositivityStratum> strata;
  std::vector<double> propensities;
};

inline estimation::Matrix feature_matrix(const Dataset& d, const std::vector<std::string>& cols,
                                         const std::vector<std::size_t>* rows = nullptr) {
  const std::size_t n = rows ? rows->size() : d.n();
  estimation::Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& col = d.column(cols[j]);
    for (std::size_t i = 0; i < n; ++i)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[rows ? (*rows)[i] : i];
  }
  return x;
}

// Integer-valued with at most this many levels.
inline constexpr std::size_t kMaxDiscreteLevels = 10;

inline bool is_discrete(const std::vector<double>& col) {
  std::vector<double> levels;
  for (double v : col) {
    if (v != std::floor(v)) return false;
    if (std::find(levels.begin(), levels.end(), v) == levels.end()) {
      levels.push_back(v);
      if (levels.size() > kMaxDiscreteLevels) return false;
    }
  }
  return true;
}

inline PositivityReport positivity_diagnostics(const Dataset& d, const std::vector<std::string>& z,
                                               double threshold = kDefaultPositivityThreshold) {
  if (!(threshold > 0 && threshold < 0.5)) throw DomainError("positivity threshold must lie in (0, 0.5)");
  for (const auto& c : z)
    if (!d.has_column(c)) throw DomainError("adjustment column '" + c + "' is not in the dataset");

  PositivityReport r;
  r.threshold = threshold;
  const auto& a = d.treatment();
  estimation::Vector target = Eigen::Map<const estimation::Vector>(a.data(), static_cast<Eigen::Index>(d.n()));
  auto x = feature_matrix(d, z);
  estimation::LearnerSpec spec{estimation::LearnerKind::logistic_main_terms};
  auto fit = estimation::fit_learner(spec, x, target, estimation::Vector::Ones(x.rows()));
  r.learner = fit.fell_back() ? "mean_only (logistic fit did not converge)" : spec.name();
  auto p = fit.predict(x);
  r.propensities.assign(p.data(), p.data() + p.size());
  r.propensity_min = p.minCoeff();
  r.propensity_max = p.maxCoeff();
  const double n = static_cast<double>(d.n());
  r.fraction_below = static_cast<double>((p.array() < threshold).count()) / n;
  r.fraction_above = static_cast<double>((p.array() > 1 - threshold).count()) / n;

  r.discrete = std::all_of(z.begin(), z.end(), [&](const std::string& c) { return is_discrete(d.column(c)); });
  if (r.discrete) {
    std::map<std::vector<double>, PositivityStratum> cells;
    for (std::size_t i = 0; i < d.n(); ++i) {
      std::vector<double> key;
      for (const auto& c : z) key.push_back(d.column(c)[i]);
      auto& s = cells[key];
      s.n++;
      s.treated += a[i] == 1;
    }
    for (auto& [key, s] : cells) {
      if (key.empty()) s.key = "(all)";
      for (std::size_t j = 0; j < key.size(); ++j)
        s.key += (j ? "," : "") + z[j] + "=" + detail::format_number(key[j]);
      s.proportion = static_cast<double>(s.treated) / static_cast<double>(s.n);
      s.flagged = s.proportion < threshold || s.proportion > 1 - threshold;
      r.strata.push_back(s);
    }
  }
  return r;
}

}  // namespace roadmap::data
