#pragma once

// roadmap-engine: one subcommand per Roadmap step, each writing a JSON
// artifact into the --out directory. Later steps read earlier artifacts.
//
// Exit codes: 0 success, 1 domain error, 2 usage or parse error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "roadmap/common.hpp"
#include "roadmap/dataset.hpp"
#include "roadmap/dgp.hpp"
#include "roadmap/estimand.hpp"
#include "roadmap/estimation.hpp"
#include "roadmap/graph.hpp"
#include "roadmap/report.hpp"
#include "roadmap/sensitivity.hpp"
#include "roadmap/simulation.hpp"

namespace roadmap::cli {

namespace fs = std::filesystem;
using report::Json;

inline constexpr const char* kTool = "roadmap-engine";
inline constexpr const char* kVersion = "0.1.0";

// Bad input files, config keys or flag combinations: exit 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Flags {
  std::string command;
  std::string graph, config, data, dgp_null, dgp_alt, designs;
  std::string out = "roadmap-out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::optional<unsigned> threads;
  bool mc_truth = false;
};

namespace detail {

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read file '" + p.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string file_hash(const fs::path& p) { return hex64(fnv1a64(read_file(p))); }

inline Json parse_json_file(const fs::path& p) {
  auto text = read_file(p);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

inline std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline std::int64_t mtime_ns(const fs::path& p) {
  auto t = fs::last_write_time(p);
  auto sys = std::chrono::file_clock::to_sys(t);
  return std::chrono::duration_cast<std::chrono::nanoseconds>(sys.time_since_epoch()).count();
}

inline std::string iso8601(std::int64_t ns) {
  std::time_t secs = static_cast<std::time_t>(ns / 1'000'000'000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>((ns / 1'000'000) % 1000));
  return out;
}

// ---------------------------------------------------------------------------
// Config-file access with typed errors

class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw UsageError(where_ + " must be a JSON object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) throw UsageError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const Json& at(const char* key) const { return j_.at(key); }

  std::string str(const char* key, std::string fallback = "") const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_string()) throw UsageError(where_ + ": '" + key + "' must be a string");
    return j_.at(key).get<std::string>();
  }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_number()) throw UsageError(where_ + ": '" + key + "' must be a number");
    return j_.at(key).get<double>();
  }

  std::int64_t integer(const char* key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_number_integer()) throw UsageError(where_ + ": '" + key + "' must be an integer");
    return j_.at(key).get<std::int64_t>();
  }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) throw UsageError(where_ + ": '" + key + "' must be true or false");
    return j_.at(key).get<bool>();
  }

  std::vector<std::string> strings(const char* key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    if (!j_.at(key).is_array()) throw UsageError(where_ + ": '" + key + "' must be an array of strings");
    for (const auto& v : j_.at(key)) {
      if (!v.is_string()) throw UsageError(where_ + ": '" + key + "' must be an array of strings");
      out.push_back(v.get<std::string>());
    }
    return out;
  }

  estimation::Interval pair(const char* key, estimation::Interval fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw UsageError(where_ + ": '" + key + "' must be a two-element numeric array");
    return {v[0].get<double>(), v[1].get<double>()};
  }

  const std::string& where() const { return where_; }

 private:
  const Json& j_;
  std::string where_;
};

inline estimation::LearnerSpec parse_learner(const Json& v, const std::string& where) {
  estimation::LearnerSpec spec;
  std::string kind;
  if (v.is_string()) {
    kind = v.get<std::string>();
    auto open = kind.find("(bins=");
    if (open != std::string::npos && kind.back() == ')') {
      try {
        spec.bins = std::stoi(kind.substr(open + 6, kind.size() - open - 7));
      } catch (const std::exception&) {
        throw UsageError(where + ": bad learner '" + kind + "'");
      }
      kind = kind.substr(0, open);
    }
  } else {
    Reader r(v, where + " learner");
    r.allow({"kind", "bins"});
    kind = r.str("kind");
    spec.bins = static_cast<int>(r.integer("bins", spec.bins));
  }
  auto k = estimation::learner_kind_from_string(kind);
  if (!k) throw UsageError(where + ": unknown learner '" + kind + "'");
  spec.kind = *k;
  return spec;
}

inline estimation::Method parse_method(const std::string& s, const std::string& where) {
  auto m = estimation::method_from_string(s);
  if (!m) throw UsageError(where + ": unknown estimator '" + s + "'");
  return *m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Study configuration

struct Study {
  std::optional<fs::path> config_path;
  Json raw = Json::object();
  std::string name = "study";
  std::string study_type;
  estimand::CausalEstimand estimand;
  bool outcome_given = false;
  std::optional<fs::path> graph, data, dgp_null, dgp_alt, designs;
  std::size_t adjustment_choice = 0;
  estimation::Method method = estimation::Method::tmle;
  estimation::EstimatorConfig estimator;
  double positivity_threshold = data::kDefaultPositivityThreshold;
  Json attestations = Json::object();

  // Sensitivity block and the file it was read from.
  Json sensitivity = nullptr;
  std::optional<fs::path> sensitivity_source;
  std::optional<sensitivity::GapBounds> gap;
  std::vector<std::string> negative_controls;
  std::string negative_control_attestation;

  std::size_t replications = 1000;
  std::uint64_t sim_seed = 1;
  unsigned threads = 1;
  bool mc_truth = false;
  std::uint64_t mc_draws = 10'000'000;

  std::string sensitivity_hash() const {
    return sensitivity.is_null() ? std::string{} : hex64(fnv1a64(sensitivity.dump()));
  }
};

namespace detail {

inline void read_sensitivity(Study& s, const Json& block, const std::string& where) {
  Reader r(block, where);
  r.allow({"gap", "negative_controls", "negative_control_attestation"});
  if (r.has("gap")) {
    Reader g(r.at("gap"), where + ".gap");
    g.allow({"lo", "hi", "provenance"});
    if (!g.has("lo") || !g.has("hi")) throw UsageError(where + ".gap needs 'lo' and 'hi'");
    s.gap = sensitivity::GapBounds{g.number("lo", 0), g.number("hi", 0), g.str("provenance")};
  }
  s.negative_controls = r.strings("negative_controls");
  s.negative_control_attestation = r.str("negative_control_attestation");
  s.sensitivity = block;
}

}  // namespace detail

inline Study load_study(const Flags& f) {
  Study s;
  s.estimand.population = "unspecified";
  auto resolve = [&](const std::string& p) -> fs::path {
    fs::path path(p);
    if (path.is_relative() && s.config_path) return s.config_path->parent_path() / path;
    return path;
  };
  if (!f.config.empty()) {
    s.config_path = fs::path(f.config);
    s.raw = detail::parse_json_file(*s.config_path);
    detail::Reader r(s.raw, "config '" + f.config + "'");
    r.allow({"study", "study_type", "population", "outcome", "outcome_description", "contrast", "graph", "data",
             "adjustment_set", "estimation", "positivity_threshold", "sensitivity", "simulation", "attestations"});
    s.name = r.str("study", s.name);
    s.study_type = r.str("study_type");
    s.estimand.population = r.str("population", s.estimand.population);
    if (r.has("outcome")) {
      s.estimand.outcome = r.str("outcome");
      s.outcome_given = true;
    }
    s.estimand.outcome_description = r.str("outcome_description");
    if (r.has("contrast")) {
      auto c = estimand::contrast_from_string(r.str("contrast"));
      if (!c) throw UsageError(r.where() + ": unknown contrast '" + r.str("contrast") + "'");
      s.estimand.contrast = *c;
    }
    if (r.has("graph")) s.graph = resolve(r.str("graph"));
    if (r.has("data")) s.data = resolve(r.str("data"));
    auto choice = r.integer("adjustment_set", 0);
    if (choice < 0) throw UsageError(r.where() + ": 'adjustment_set' must be non-negative");
    s.adjustment_choice = static_cast<std::size_t>(choice);
    s.positivity_threshold = r.number("positivity_threshold", s.positivity_threshold);

    if (r.has("estimation")) {
      detail::Reader e(r.at("estimation"), r.where() + ".estimation");
      e.allow({"method", "library", "folds", "seed", "propensity_bounds", "outcome_bounds", "bootstrap_resamples"});
      if (e.has("method")) s.method = detail::parse_method(e.str("method"), e.where());
      if (e.has("library")) {
        if (!e.at("library").is_array()) throw UsageError(e.where() + ": 'library' must be an array");
        s.estimator.super_learner.library.clear();
        for (const auto& l : e.at("library"))
          s.estimator.super_learner.library.push_back(detail::parse_learner(l, e.where()));
      }
      s.estimator.super_learner.folds = static_cast<int>(e.integer("folds", 0));
      s.estimator.super_learner.seed = static_cast<std::uint64_t>(e.integer("seed", 1));
      s.estimator.propensity_bounds = e.pair("propensity_bounds", s.estimator.propensity_bounds);
      s.estimator.outcome_bounds = e.pair("outcome_bounds", s.estimator.outcome_bounds);
      s.estimator.bootstrap_resamples = static_cast<int>(e.integer("bootstrap_resamples", 200));
    }

    if (r.has("sensitivity")) {
      const auto& block = r.at("sensitivity");
      if (block.is_string()) {
        s.sensitivity_source = resolve(block.get<std::string>());
        detail::read_sensitivity(s, detail::parse_json_file(*s.sensitivity_source),
                                 "sensitivity file '" + s.sensitivity_source->string() + "'");
      } else {
        s.sensitivity_source = s.config_path;
        detail::read_sensitivity(s, block, r.where() + ".sensitivity");
      }
    }

    if (r.has("simulation")) {
      detail::Reader m(r.at("simulation"), r.where() + ".simulation");
      m.allow({"dgp_null", "dgp_alt", "designs", "replications", "seed", "threads", "mc_truth", "mc_draws"});
      if (m.has("dgp_null")) s.dgp_null = resolve(m.str("dgp_null"));
      if (m.has("dgp_alt")) s.dgp_alt = resolve(m.str("dgp_alt"));
      if (m.has("designs")) s.designs = resolve(m.str("designs"));
      s.replications = static_cast<std::size_t>(m.integer("replications", 1000));
      s.sim_seed = static_cast<std::uint64_t>(m.integer("seed", 1));
      s.threads = static_cast<unsigned>(m.integer("threads", 1));
      s.mc_truth = m.boolean("mc_truth", false);
      s.mc_draws = static_cast<std::uint64_t>(m.integer("mc_draws", 10'000'000));
    }

    if (r.has("attestations")) {
      if (!r.at("attestations").is_object()) throw UsageError(r.where() + ": 'attestations' must be an object");
      for (auto it = r.at("attestations").begin(); it != r.at("attestations").end(); ++it) {
        static const char* steps[] = {"1a", "1b", "2", "3", "4", "5", "6", "7"};
        bool ok = false;
        for (auto* st : steps) ok = ok || it.key() == st;
        if (!ok) throw UsageError(r.where() + ": attestation for unknown step '" + it.key() + "'");
        if (!it.value().is_string()) throw UsageError(r.where() + ": attestations must be strings");
      }
      s.attestations = r.at("attestations");
    }
  }
  if (!f.graph.empty()) s.graph = fs::path(f.graph);
  if (!f.data.empty()) s.data = fs::path(f.data);
  if (!f.dgp_null.empty()) s.dgp_null = fs::path(f.dgp_null);
  if (!f.dgp_alt.empty()) s.dgp_alt = fs::path(f.dgp_alt);
  if (!f.designs.empty()) s.designs = fs::path(f.designs);
  if (f.seed) {
    s.estimator.super_learner.seed = *f.seed;
    s.sim_seed = *f.seed;
  }
  if (f.reps) s.replications = *f.reps;
  if (f.threads) s.threads = *f.threads;
  if (f.mc_truth) s.mc_truth = true;
  return s;
}

// ---------------------------------------------------------------------------
// Artifacts

inline fs::path artifact_path(const Flags& f, const std::string& name) { return fs::path(f.out) / (name + ".json"); }

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + p.string() + "'");
  out << text;
}

// Adds schema_version first and the metadata block last, then writes.
inline Json write_artifact(const Flags& f, const std::string& name, const Json& body) {
  fs::create_directories(f.out);
  Json doc;
  doc["schema_version"] = report::kSchemaVersion;
  doc["artifact"] = name;
  for (auto it = body.begin(); it != body.end(); ++it) doc[it.key()] = it.value();
  const auto ns = detail::now_ns();
  doc["metadata"] = {{"tool", kTool}, {"version", kVersion}, {"created", detail::iso8601(ns)},
                     {"created_unix_ns", ns}};
  write_text(artifact_path(f, name), doc.dump(2) + "\n");
  return doc;
}

inline std::optional<Json> read_artifact(const Flags& f, const std::string& name) {
  auto p = artifact_path(f, name);
  if (!fs::exists(p)) return std::nullopt;
  return detail::parse_json_file(p);
}

inline Json require_artifact(const Flags& f, const std::string& name, const std::string& step,
                             const std::string& command) {
  auto a = read_artifact(f, name);
  if (!a)
    throw DomainError(step + " missing: run '" + command + "' first (no " + artifact_path(f, name).string() + ")");
  return *a;
}

inline Json without_metadata(Json j) {
  j.erase("metadata");
  return j;
}

// ---------------------------------------------------------------------------
// Shared loading

inline graph::CausalGraph load_graph(const Study& s) {
  if (!s.graph) throw UsageError("no graph given (use --graph or the config 'graph' key)");
  return graph::parse_graph(detail::read_file(*s.graph));
}

inline estimand::CausalEstimand estimand_for(const Study& s, const graph::CausalGraph& g) {
  auto ce = s.estimand;
  if (!s.outcome_given) {
    auto y = g.find_role(graph::Role::outcome);
    if (!y) throw DomainError("graph '" + g.name() + "' has no outcome node");
    ce.outcome = g.node(*y).id;
  }
  return ce;
}

inline estimand::StatisticalEstimand statistical_from(const Json& identify) {
  if (!identify.contains("statistical_estimand") || identify["statistical_estimand"].is_null())
    throw DomainError("Step 3 did not identify the causal estimand, so no adjustment set was chosen");
  const auto& j = identify["statistical_estimand"];
  estimand::StatisticalEstimand se;
  se.adjustment_set = j["adjustment_set"].get<std::vector<std::string>>();
  se.contrast = *estimand::contrast_from_string(j["contrast"].get<std::string>());
  se.treatment = j["treatment"].get<std::string>();
  se.outcome = j["outcome"].get<std::string>();
  if (!j["censoring"].is_null()) se.censoring = j["censoring"].get<std::string>();
  return se;
}

inline data::Dataset load_data(const Study& s, const estimand::StatisticalEstimand& se) {
  if (!s.data) throw UsageError("no data given (use --data or the config 'data' key)");
  data::Schema schema{se.treatment, se.outcome, se.censoring, se.adjustment_set};
  return data::load_dataset(s.data->string(), schema);
}

inline std::vector<simulation::DesignSpec> load_designs(const Study& s) {
  if (!s.designs) throw UsageError("no designs file given (use --designs or config simulation.designs)");
  auto j = detail::parse_json_file(*s.designs);
  detail::Reader top(j, "designs file '" + s.designs->string() + "'");
  top.allow({"designs"});
  if (!top.has("designs") || !top.at("designs").is_array() || top.at("designs").empty())
    throw UsageError(top.where() + ": 'designs' must be a non-empty array");
  std::vector<simulation::DesignSpec> out;
  for (const auto& d : top.at("designs")) {
    detail::Reader r(d, top.where() + " design");
    r.allow({"name", "kind", "n", "n_rct", "n_external", "deltas", "estimators", "alpha", "adjustment"});
    simulation::DesignSpec spec;
    spec.name = r.str("name");
    auto kind = simulation::design_kind_from_string(r.str("kind"));
    if (!kind) throw UsageError(r.where() + ": unknown kind '" + r.str("kind") + "'");
    spec.kind = *kind;
    auto size = [&](const char* key) {
      auto v = r.integer(key, 0);
      if (v < 0) throw UsageError(r.where() + ": '" + key + "' must be non-negative");
      return static_cast<std::size_t>(v);
    };
    spec.n = size("n");
    spec.n_rct = size("n_rct");
    spec.n_external = size("n_external");
    if (r.has("deltas")) {
      if (!r.at("deltas").is_array()) throw UsageError(r.where() + ": 'deltas' must be an array");
      spec.deltas.clear();
      for (const auto& v : r.at("deltas")) {
        if (!v.is_number()) throw UsageError(r.where() + ": 'deltas' must be numbers");
        spec.deltas.push_back(v.get<double>());
      }
    }
    if (r.has("estimators")) {
      spec.estimators.clear();
      for (const auto& m : r.strings("estimators")) spec.estimators.push_back(detail::parse_method(m, r.where()));
    }
    spec.alpha = r.number("alpha", 0.05);
    if (r.has("adjustment")) spec.adjustment = r.strings("adjustment");
    spec.validate();
    out.push_back(std::move(spec));
  }
  return out;
}

inline dgp::DGPSpec load_dgp(const std::optional<fs::path>& p, const char* which) {
  if (!p) throw UsageError(std::string("no ") + which + " DGP given (use --dgp-" + which + ")");
  return dgp::parse_dgp(detail::read_file(*p));
}

inline Json inputs_of(const Study& s) {
  Json j = Json::object();
  auto add = [&](const char* key, const std::optional<fs::path>& p) {
    if (p) j[key] = {{"path", p->string()}, {"fnv1a64", detail::file_hash(*p)}};
  };
  if (s.config_path) add("config", s.config_path);
  add("graph", s.graph);
  add("data", s.data);
  return j;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_validate_dag(const Flags& f, const Study& s, std::ostream& out) {
  auto g = load_graph(s);
  Json body{{"step", "1b"}, {"inputs", inputs_of(s)}, {"graph", report::to_json(g)}};
  write_artifact(f, "graph", body);
  out << graph::render(g);
  out << "graph '" << g.name() << "' is a valid DAG with " << g.size() << " nodes and " << g.edges().size()
      << " edges\n";
  return 0;
}

inline int cmd_identify(const Flags& f, const Study& s, std::ostream& out) {
  auto g = load_graph(s);
  auto ce = estimand_for(s, g);
  auto ir = estimand::check_identification(g, ce);
  Json body{{"step", "3"},
            {"inputs", inputs_of(s)},
            {"causal_estimand", report::to_json(ce)},
            {"graph", report::to_json(g)},
            {"identification", report::to_json(ir)}};
  if (!ir.identified()) {
    body["chosen_adjustment_set"] = nullptr;
    body["statistical_estimand"] = nullptr;
    write_artifact(f, "identify", body);
    throw estimand::NotIdentifiedError(ir.open_paths());
  }
  auto se = estimand::compile_statistical_estimand(ce, ir, s.adjustment_choice);
  body["chosen_adjustment_set"] = s.adjustment_choice;
  body["statistical_estimand"] = report::to_json(se);
  write_artifact(f, "identify", body);
  out << "identified: " << ir.adjustment_sets.size() << " minimal adjustment set(s)\n";
  for (std::size_t i = 0; i < ir.adjustment_sets.size(); ++i) {
    out << "  [" << i << "] {";
    for (std::size_t k = 0; k < ir.adjustment_sets[i].size(); ++k) out << (k ? ", " : "") << ir.adjustment_sets[i][k];
    out << "}" << (i == s.adjustment_choice ? "  <- chosen" : "") << "\n";
  }
  for (const auto& a : ir.assumptions) out << "  " << a.assumption << ": " << estimand::to_string(a.verdict) << "\n";
  out << "statistical estimand: " << se.formula() << "\n";
  return 0;
}

inline int cmd_diagnose(const Flags& f, const Study& s, std::ostream& out) {
  auto identify = read_artifact(f, "identify");
  estimand::StatisticalEstimand se;
  if (identify && !(*identify)["statistical_estimand"].is_null()) {
    se = statistical_from(*identify);
  } else {
    auto g = load_graph(s);
    auto q = graph::prepare_adjustment_query(g);
    se.treatment = g.node(q.treatment).id;
    se.outcome = g.node(q.outcome).id;
    if (q.censoring) se.censoring = g.node(*q.censoring).id;
    for (auto i : q.pool) se.adjustment_set.push_back(g.node(i).id);
  }
  auto d = load_data(s, se);
  auto miss = data::missingness_summary(d);
  auto pos = data::positivity_diagnostics(d, se.adjustment_set, s.positivity_threshold);
  std::size_t flagged = 0;
  for (const auto& st : pos.strata) flagged += st.flagged;
  Json body{{"step", "2"},
            {"inputs", inputs_of(s)},
            {"adjustment_set", se.adjustment_set},
            {"rows", d.n()},
            {"columns", d.names()},
            {"missingness", report::to_json(miss)},
            {"positivity", report::to_json(pos)},
            {"positivity_flagged_strata", flagged}};
  write_artifact(f, "diagnose", body);
  out << "rows: " << d.n() << "; censored with missing outcome: " << miss.censored_missing
      << "; uncensored rows missing the outcome: " << miss.inconsistent_rows << "\n";
  out << "propensity range [" << report::fmt(pos.propensity_min) << ", " << report::fmt(pos.propensity_max)
      << "]; below threshold: " << report::fmt(pos.fraction_below) << "; above: " << report::fmt(pos.fraction_above)
      << "; flagged strata: " << flagged << "\n";
  return 0;
}

inline int cmd_estimate(const Flags& f, const Study& s, std::ostream& out) {
  auto identify = require_artifact(f, "identify", "Step 3", "identify");
  auto se = statistical_from(identify);
  if (s.outcome_given && s.estimand.outcome != se.outcome)
    throw DomainError("config outcome '" + s.estimand.outcome + "' differs from the identified outcome '" +
                      se.outcome + "'; re-run identify");
  auto d = load_data(s, se);
  auto r = estimation::estimate(d, se, s.method, s.estimator);
  Json body{{"step", "5"},
            {"inputs", inputs_of(s)},
            {"statistical_estimand", report::to_json(se)},
            {"estimator", report::to_json(s.estimator)},
            {"estimate", report::to_json(r)},
            {"sensitivity_prespecified",
             {{"fnv1a64", s.sensitivity.is_null() ? Json(nullptr) : Json(s.sensitivity_hash())},
              {"source", s.sensitivity_source ? Json(s.sensitivity_source->string()) : Json(nullptr)}}}};
  write_artifact(f, "estimate", body);
  out << estimation::to_string(r.method) << " " << estimand::to_string(r.contrast) << ": " << report::fmt(r.point)
      << " (95% CI " << report::fmt(r.ci95.lo) << ", " << report::fmt(r.ci95.hi) << "); risks "
      << report::fmt(r.risk1) << " vs " << report::fmt(r.risk0) << "\n";
  return 0;
}

inline estimation::EstimateResult estimate_from_json(const Json& j) {
  auto get = [](const Json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  estimation::EstimateResult r;
  r.method = *estimation::method_from_string(j["method"].get<std::string>());
  r.contrast = *estimand::contrast_from_string(j["contrast"].get<std::string>());
  r.point = get(j["point"]);
  r.se = get(j["se"]);
  r.ci95 = {get(j["ci95"][0]), get(j["ci95"][1])};
  r.risk1 = get(j["risk1"]);
  r.risk0 = get(j["risk0"]);
  r.difference_se = get(j["difference"]["se"]);
  r.difference_ci = {get(j["difference"]["ci95"][0]), get(j["difference"]["ci95"][1])};
  r.log_ratio_se = get(j["ratio"]["log_se"]);
  r.ratio_ci = {get(j["ratio"]["ci95"][0]), get(j["ratio"]["ci95"][1])};
  r.n = j["n"].get<std::size_t>();
  r.n_uncensored = j["n_uncensored"].get<std::size_t>();
  return r;
}

inline int cmd_sensitivity(const Flags& f, const Study& s, std::ostream& out) {
  auto est = require_artifact(f, "estimate", "Step 5", "estimate");
  const auto& pre = est["sensitivity_prespecified"];
  const std::int64_t estimated_at = est["metadata"]["created_unix_ns"].get<std::int64_t>();
  if (s.sensitivity_source) {
    auto modified = detail::mtime_ns(*s.sensitivity_source);
    if (modified > estimated_at)
      throw DomainError("sensitivity configuration '" + s.sensitivity_source->string() +
                        "' was modified after the estimate (" + detail::iso8601(modified) + " > " +
                        detail::iso8601(estimated_at) + "); sensitivity analyses must be pre-specified");
  }
  std::string recorded = pre["fnv1a64"].is_null() ? std::string{} : pre["fnv1a64"].get<std::string>();
  if (recorded != s.sensitivity_hash())
    throw DomainError("sensitivity configuration differs from the one recorded when the estimate was made; "
                      "sensitivity analyses must be pre-specified");

  auto identify = require_artifact(f, "identify", "Step 3", "identify");
  auto se = statistical_from(identify);
  auto primary = estimate_from_json(est["estimate"]);
  std::optional<data::Dataset> d;
  if (!s.negative_controls.empty()) d = load_data(s, se);
  sensitivity::SensitivityReport rep;
  if (d) {
    rep = sensitivity::analyze(*d, se, primary, s.gap, s.negative_controls, s.estimator);
  } else {
    data::Dataset none;
    rep = sensitivity::analyze(none, se, primary, s.gap, {}, s.estimator);
  }
  Json body{{"step", "6"},
            {"inputs", inputs_of(s)},
            {"prespecification",
             {{"fnv1a64", recorded.empty() ? Json(nullptr) : Json(recorded)},
              {"negative_control_attestation", s.negative_control_attestation}}},
            {"sensitivity", report::to_json(rep)}};
  if (primary.contrast != estimand::Contrast::risk_difference)
    body["sensitivity"]["causal_gap_note"] = "causal-gap shifting is restricted to the risk-difference scale";
  write_artifact(f, "sensitivity", body);
  out << "E-value " << report::fmt(rep.e_value.point, 3) << " (CI limit " << report::fmt(rep.e_value.ci, 3) << ")\n";
  if (rep.gap_applied)
    out << "gap-shifted 95% CI (" << report::fmt(rep.shifted_ci.lo) << ", " << report::fmt(rep.shifted_ci.hi)
        << ")\n";
  for (const auto& nc : rep.negative_controls)
    out << "negative control " << nc.column << ": " << (nc.null_excluded ? "null excluded" : "null not excluded")
        << "\n";
  out << rep.verdict << "\n";
  return 0;
}

inline dgp::Truth truth_for(const Study& s, const dgp::DGPSpec& g, const estimand::CausalEstimand& ce) {
  if (s.mc_truth) return dgp::true_estimand_monte_carlo(g, ce, s.mc_draws, s.sim_seed);
  return dgp::true_estimand(g, ce);
}

inline int run_simulation(const Flags& f, const Study& s, std::ostream& out, bool compare) {
  auto null_dgp = load_dgp(s.dgp_null, "null");
  auto alt_dgp = load_dgp(s.dgp_alt, "alt");
  auto designs = load_designs(s);
  if (s.graph) {
    auto g = load_graph(s);
    dgp::check_against(null_dgp, g);
    dgp::check_against(alt_dgp, g);
  }
  for (const auto* g : {&null_dgp, &alt_dgp})
    if (g->node(g->treatment()).name != alt_dgp.node(alt_dgp.treatment()).name ||
        g->node(g->outcome()).name != alt_dgp.node(alt_dgp.outcome()).name)
      throw DomainError("null and alternative DGPs disagree on treatment or outcome nodes");

  auto ce = s.estimand;
  if (!s.outcome_given) ce.outcome = alt_dgp.node(alt_dgp.outcome()).name;
  ce.contrast = estimand::Contrast::risk_difference;

  // The planned adjustment set applies unless a design names its own.
  if (auto identify = read_artifact(f, "identify"); identify && !(*identify)["statistical_estimand"].is_null()) {
    auto planned = statistical_from(*identify).adjustment_set;
    for (auto& d : designs)
      if (!d.adjustment) d.adjustment = planned;
  }
  if (!compare) {
    designs.resize(1);
    designs[0].estimators = {estimation::Method::unadjusted, estimation::Method::gcomp, estimation::Method::ipw,
                             estimation::Method::tmle};
  }
  simulation::SimulationOptions opt;
  opt.replications = s.replications;
  opt.seed = s.sim_seed;
  opt.estimator = s.estimator;
  opt.threads = s.threads;
  auto rep = simulation::evaluate(null_dgp, alt_dgp, designs, opt, ce);
  if (s.mc_truth) {
    rep.truth_null = truth_for(s, null_dgp, ce);
    rep.truth_alt = truth_for(s, alt_dgp, ce);
  }

  Json ds = Json::array();
  for (const auto& d : designs) ds.push_back(report::to_json(d));
  Json in = Json::object();
  in["dgp_null"] = {{"path", s.dgp_null->string()}, {"fnv1a64", detail::file_hash(*s.dgp_null)}};
  in["dgp_alt"] = {{"path", s.dgp_alt->string()}, {"fnv1a64", detail::file_hash(*s.dgp_alt)}};
  in["designs"] = {{"path", s.designs->string()}, {"fnv1a64", detail::file_hash(*s.designs)}};
  const std::string name = compare ? "compare-designs" : "simulate";
  Json body{{"step", compare ? "7" : "5"},
            {"inputs", in},
            {"outcome_blind", true},
            {"estimator", report::to_json(s.estimator)},
            {"designs", ds},
            {"simulation", report::to_json(rep)}};
  write_artifact(f, name, body);
  auto table = report::simulation_table(rep);
  write_text(fs::path(f.out) / (name + ".md"),
             std::string("# ") + (compare ? "Design comparison" : "Estimator comparison") + "\n\n" + table);
  out << table;
  return 0;
}

// ---------------------------------------------------------------------------
// Report

inline void validate_report(const Json& r) {
  static const char* order[] = {"1", "2", "3", "4", "5", "6", "7"};
  const auto& sec = r.at("sections");
  if (sec.size() != 7) throw Error("report must have exactly 7 sections");
  std::size_t i = 0;
  for (auto it = sec.begin(); it != sec.end(); ++it, ++i)
    if (it.key() != order[i]) throw Error("report sections out of Roadmap order at '" + it.key() + "'");
  auto one = sec.at("1");
  std::vector<std::string> subs;
  for (auto it = one.begin(); it != one.end(); ++it)
    if (it.key() == "1a" || it.key() == "1b") subs.push_back(it.key());
  if (subs != std::vector<std::string>{"1a", "1b"}) throw Error("section 1 must contain 1a then 1b");
  const bool chosen = !sec.at("3").at("outputs").value("chosen_adjustment_set", Json(nullptr)).is_null();
  if (sec.at("5").at("outputs").contains("estimate") && !chosen)
    throw Error("estimate present without a chosen adjustment set");
}

inline Json section(const char* title, const char* status, Json inputs, Json outputs, Json verdicts,
                    const Study& s, const char* step) {
  return {{"title", title},
          {"status", status},
          {"inputs", std::move(inputs)},
          {"outputs", std::move(outputs)},
          {"verdicts", std::move(verdicts)},
          {"attestation", s.attestations.contains(step) ? s.attestations[step] : Json(nullptr)}};
}

inline int cmd_report(const Flags& f, const Study& s, std::ostream& out) {
  std::map<std::string, std::optional<Json>> art;
  Json timestamps = Json::object();
  for (const char* n : {"graph", "identify", "diagnose", "estimate", "sensitivity", "simulate", "compare-designs"}) {
    art[n] = read_artifact(f, n);
    if (art[n]) {
      timestamps[n] = (*art[n])["metadata"]["created"];
      *art[n] = without_metadata(*art[n]);
    }
  }
  auto status = [&](const char* n) { return art[n] ? "complete" : "missing"; };
  auto body = [&](const char* n, const char* key) { return art[n] ? (*art[n])[key] : Json(nullptr); };

  const auto& id = art["identify"];
  const bool chosen = id && !(*id)["chosen_adjustment_set"].is_null();

  Json sections = Json::object();
  Json one = {{"title", "Causal question, causal model, and causal estimand"}};
  one["1a"] = section("Causal question and causal estimand", status("identify"), Json::object(),
                      {{"causal_estimand", body("identify", "causal_estimand")}}, Json::array(), s, "1a");
  Json graph_json = art["graph"] ? (*art["graph"])["graph"] : body("identify", "graph");
  one["1b"] = section("Causal model", (art["graph"] || id) ? "complete" : "missing",
                      art["graph"] ? body("graph", "inputs") : body("identify", "inputs"),
                      {{"study_type", s.study_type}, {"graph", graph_json}}, Json::array(), s, "1b");
  sections["1"] = one;

  Json v2 = Json::array();
  if (art["diagnose"]) {
    const auto& dg = *art["diagnose"];
    v2.push_back({{"check", "positivity"},
                  {"verdict", dg["positivity_flagged_strata"].get<std::size_t>() == 0 ? "no flagged strata"
                                                                                       : "strata flagged"}});
    v2.push_back({{"check", "outcome recorded whenever uncensored"},
                  {"verdict", dg["missingness"]["inconsistent_rows"].get<std::size_t>() == 0 ? "yes" : "no"}});
  }
  sections["2"] = section("Observed data", status("diagnose"), body("diagnose", "inputs"),
                          art["diagnose"] ? Json{{"rows", body("diagnose", "rows")},
                                                 {"columns", body("diagnose", "columns")},
                                                 {"missingness", body("diagnose", "missingness")},
                                                 {"positivity", body("diagnose", "positivity")}}
                                          : Json::object(),
                          v2, s, "2");

  Json v3 = Json::array();
  if (id)
    for (const auto& a : (*id)["identification"]["assumptions"])
      v3.push_back({{"assumption", a["assumption"]}, {"verdict", a["verdict"]}});
  const char* st3 = !id ? "missing" : chosen ? "complete" : "not identified";
  sections["3"] = section("Identifiability", st3, body("identify", "inputs"),
                          id ? Json{{"identification", (*id)["identification"]},
                                    {"chosen_adjustment_set", (*id)["chosen_adjustment_set"]}}
                             : Json{{"chosen_adjustment_set", nullptr}},
                          v3, s, "3");

  sections["4"] = section("Statistical estimand", chosen ? "complete" : "missing", Json::object(),
                          {{"statistical_estimand", chosen ? (*id)["statistical_estimand"] : Json(nullptr)}},
                          Json::array(), s, "4");

  Json out5 = {{"estimator", estimation::to_string(s.method)}, {"estimator_config", report::to_json(s.estimator)}};
  if (chosen && art["estimate"]) out5["estimate"] = (*art["estimate"])["estimate"];
  if (art["simulate"]) out5["estimator_comparison"] = (*art["simulate"])["simulation"];
  Json v5 = Json::array();
  if (chosen && art["estimate"]) {
    const auto& e = (*art["estimate"])["estimate"];
    if (!e["nuisance"]["score_equation_solved"].is_null())
      v5.push_back({{"check", "efficient score equation solved"}, {"verdict", e["nuisance"]["score_equation_solved"]}});
  }
  sections["5"] = section("Statistical model, estimator, and confidence intervals",
                          chosen && art["estimate"] ? "complete" : "missing", body("estimate", "inputs"), out5, v5, s,
                          "5");

  Json v6 = Json::array();
  if (art["sensitivity"]) v6.push_back({{"check", "sensitivity"}, {"verdict", (*art["sensitivity"])["sensitivity"]["verdict"]}});
  sections["6"] = section("Sensitivity analysis", status("sensitivity"), body("sensitivity", "inputs"),
                          art["sensitivity"] ? Json{{"prespecification", (*art["sensitivity"])["prespecification"]},
                                                    {"sensitivity", (*art["sensitivity"])["sensitivity"]}}
                                             : Json::object(),
                          v6, s, "6");

  Json v7 = Json::array();
  if (art["compare-designs"])
    for (const auto& h : (*art["compare-designs"])["simulation"]["hybrid"])
      v7.push_back({{"design", h["design"]},
                    {"estimator", h["estimator"]},
                    {"worst_case_type_one_error", h["worst_case_type_one_error"]}});
  sections["7"] = section("Comparison of complete analytic designs", status("compare-designs"),
                          body("compare-designs", "inputs"),
                          art["compare-designs"] ? Json{{"designs", (*art["compare-designs"])["designs"]},
                                                        {"simulation", (*art["compare-designs"])["simulation"]}}
                                                 : Json::object(),
                          v7, s, "7");

  Json config_hash = s.config_path ? Json(detail::file_hash(*s.config_path)) : Json(nullptr);
  Json artifact_hashes = Json::object();
  for (const auto& [n, a] : art)
    if (a) artifact_hashes[n] = hex64(fnv1a64(a->dump()));
  Json rep{{"study", s.name},
           {"config_fnv1a64", config_hash},
           {"master_seed", s.sim_seed},
           {"estimator_seed", s.estimator.super_learner.seed},
           {"artifacts", artifact_hashes},
           {"sections", sections}};
  Json full;
  full["schema_version"] = report::kSchemaVersion;
  full["artifact"] = "report";
  for (auto it = rep.begin(); it != rep.end(); ++it) full[it.key()] = it.value();
  validate_report(full);
  Json body_only = full;
  body_only.erase("schema_version");
  body_only.erase("artifact");
  auto written = write_artifact(f, "report", body_only);
  // Artifact timestamps live with the other metadata.
  written["metadata"]["artifact_timestamps"] = timestamps;
  write_text(artifact_path(f, "report"), written.dump(2) + "\n");

  std::ostringstream md;
  md << "# Study report: " << s.name << "\n\n| Step | Item | Status | Attestation |\n|---|---|---|---|\n";
  auto row = [&](const std::string& step, const Json& sec) {
    md << "| " << step << " | " << sec["title"].get<std::string>() << " | " << sec["status"].get<std::string>()
       << " | " << (sec["attestation"].is_null() ? "" : sec["attestation"].get<std::string>()) << " |\n";
  };
  row("1a", sections["1"]["1a"]);
  row("1b", sections["1"]["1b"]);
  for (const char* k : {"2", "3", "4", "5", "6", "7"}) row(k, sections[k]);
  if (chosen) md << "\nStatistical estimand: `" << (*id)["statistical_estimand"]["formula"].get<std::string>() << "`\n";
  if (chosen && art["estimate"]) {
    auto e = estimate_from_json((*art["estimate"])["estimate"]);
    md << "\nEstimate (" << estimation::to_string(e.method) << "): " << report::fmt(e.point) << " (95% CI "
       << report::fmt(e.ci95.lo) << ", " << report::fmt(e.ci95.hi) << ")\n";
  }
  write_text(fs::path(f.out) / "report.md", md.str());
  out << md.str();
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline const char* step_of(const std::string& command) {
  if (command == "validate-dag") return "Step 1b";
  if (command == "identify") return "Step 3";
  if (command == "diagnose") return "Step 2";
  if (command == "estimate") return "Step 5";
  if (command == "sensitivity") return "Step 6";
  if (command == "simulate") return "Step 5";
  if (command == "compare-designs") return "Step 7";
  return "Report";
}

inline int dispatch(const Flags& f, std::ostream& out) {
  auto s = load_study(f);
  if (f.command == "validate-dag") return cmd_validate_dag(f, s, out);
  if (f.command == "identify") return cmd_identify(f, s, out);
  if (f.command == "diagnose") return cmd_diagnose(f, s, out);
  if (f.command == "estimate") return cmd_estimate(f, s, out);
  if (f.command == "sensitivity") return cmd_sensitivity(f, s, out);
  if (f.command == "simulate") return run_simulation(f, s, out, false);
  if (f.command == "compare-designs") return run_simulation(f, s, out, true);
  return cmd_report(f, s, out);
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Flags f;
  CLI::App app{"Causal Roadmap workflow: identification, estimation, sensitivity and design simulation", kTool};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--graph", f.graph, "causal graph file (DAG DSL)");
  app.add_option("--config", f.config, "study configuration (JSON)");
  app.add_option("--data", f.data, "observed data (CSV)");
  app.add_option("--dgp-null", f.dgp_null, "null data-generating process");
  app.add_option("--dgp-alt", f.dgp_alt, "alternative data-generating process");
  app.add_option("--designs", f.designs, "design file (JSON)");
  app.add_option("--out", f.out, "artifact directory")->capture_default_str();
  app.add_option("--seed", f.seed, "master seed (overrides the config)");
  app.add_option("--reps", f.reps, "Monte Carlo replications (overrides the config)");
  app.add_option("--threads", f.threads, "worker threads for simulation (0 = all cores)");
  app.add_flag("--mc-truth", f.mc_truth, "Monte Carlo truth instead of exact enumeration");
  const std::pair<const char*, const char*> commands[] = {
      {"validate-dag", "Step 1b: parse and check the causal graph"},
      {"identify", "Step 3-4: identification verdicts and the statistical estimand"},
      {"diagnose", "Step 2: missingness and positivity diagnostics"},
      {"estimate", "Step 5: estimate the statistical estimand"},
      {"sensitivity", "Step 6: causal-gap interval, E-value, negative controls"},
      {"simulate", "Step 5: outcome-blind estimator comparison"},
      {"compare-designs", "Step 7: outcome-blind comparison of complete designs"},
      {"report", "assemble the study report"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  std::vector<std::string> argv_store{kTool};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error [usage]: " << e.what() << "\n";
    return 2;
  }
  for (auto* sub : app.get_subcommands()) f.command = sub->get_name();

  const std::string step = step_of(f.command);
  try {
    return dispatch(f, out);
  } catch (const ParseError& e) {
    err << "error [" << step << "]: parse error at line " << e.line() << ", column " << e.column() << ": " << e.what()
        << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "error [" << step << "]: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "error [" << step << "]: malformed artifact or config: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error [" << step << "]: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error [" << step << "]: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace roadmap::cli
