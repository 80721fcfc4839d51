#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "roadmap/cli.hpp"

namespace fs = std::filesystem;
using roadmap::report::Json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = roadmap::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Json load(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Fresh copy of the demo study with a fast simulation block.
class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("roadmap_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& e : fs::directory_iterator(fs::path(ROADMAP_STUDIES) / "demo"))
      fs::copy_file(e.path(), dir / e.path().filename());
    write(dir / "designs.json", R"({"designs": [
      {"name": "trial", "kind": "rct", "n": 200, "estimators": ["unadjusted", "tmle"]},
      {"name": "hybrid", "kind": "hybrid", "n_rct": 100, "n_external": 100, "deltas": [0, 1.0],
       "estimators": ["tmle"]}]})");
    auto cfg = load(dir / "study.json");
    cfg["simulation"]["replications"] = 100;
    cfg["estimation"]["bootstrap_resamples"] = 10;
    write(dir / "study.json", cfg.dump(2));
    config = (dir / "study.json").string();
    out = (dir / "out").string();
  }
  void TearDown() override { fs::remove_all(dir); }

  Outcome step(const std::string& command, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{command, "--config", config, "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  void pipeline() {
    for (const char* c : {"validate-dag", "identify", "diagnose", "estimate", "sensitivity", "simulate",
                          "compare-designs", "report"}) {
      auto r = step(c);
      ASSERT_EQ(r.code, 0) << c << ": " << r.err;
    }
  }

  fs::path dir;
  std::string config;
  std::string out;
};

}  // namespace

TEST(Cli, IdentifyLatentConfounderFailsWithOpenPath) {
  auto out = fs::temp_directory_path() / "roadmap_cli_unmeasured";
  fs::remove_all(out);
  auto r = run({"identify", "--graph", std::string(ROADMAP_STUDIES) + "/unmeasured/study.dag", "--out", out.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("A <- U -> Y"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("[Step 3]"), std::string::npos) << r.err;
  auto j = load(out / "identify.json");
  EXPECT_EQ(j["identification"]["status"], "not_identified");
  EXPECT_TRUE(j["statistical_estimand"].is_null());

  // The report keeps the estimate section empty when nothing was identified.
  auto rep = run({"report", "--out", out.string()});
  EXPECT_EQ(rep.code, 0) << rep.err;
  auto report = load(out / "report.json");
  EXPECT_EQ(report["sections"]["3"]["status"], "not identified");
  EXPECT_FALSE(report["sections"]["5"]["outputs"].contains("estimate"));
  fs::remove_all(out);
}

TEST_F(Workspace, EstimateBeforeIdentify) {
  auto r = step("estimate");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Step 3 missing"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("[Step 5]"), std::string::npos) << r.err;
}

TEST_F(Workspace, SensitivityBeforeEstimate) {
  ASSERT_EQ(step("identify").code, 0);
  auto r = step("sensitivity");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Step 5 missing"), std::string::npos) << r.err;
}

TEST_F(Workspace, FullPipelineReport) {
  pipeline();
  auto rep = load(fs::path(out) / "report.json");
  EXPECT_EQ(rep["schema_version"], 1);
  const auto& sec = rep["sections"];
  ASSERT_EQ(sec.size(), 7u);
  std::vector<std::string> keys;
  for (auto it = sec.begin(); it != sec.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"1", "2", "3", "4", "5", "6", "7"}));
  for (const char* sub : {"1a", "1b"}) EXPECT_EQ(sec["1"][sub]["status"], "complete");
  for (const char* k : {"2", "3", "4", "5", "6", "7"}) EXPECT_EQ(sec[k]["status"], "complete") << k;
  EXPECT_EQ(sec["1"]["1a"]["attestation"], "Question agreed with the clinical team before data access");
  EXPECT_TRUE(sec["5"]["outputs"]["estimate"]["nuisance"]["score_equation_solved"].get<bool>());
  EXPECT_EQ(sec["3"]["outputs"]["chosen_adjustment_set"], 0);
  EXPECT_EQ(rep["master_seed"], 2024);
  EXPECT_TRUE(rep["metadata"].contains("created"));

  std::ifstream md(fs::path(out) / "report.md");
  std::string text((std::istreambuf_iterator<char>(md)), {});
  for (const char* row : {"| 1a |", "| 1b |", "| 2 |", "| 3 |", "| 4 |", "| 5 |", "| 6 |", "| 7 |"})
    EXPECT_NE(text.find(row), std::string::npos) << row;

  auto est = load(fs::path(out) / "estimate.json")["estimate"];
  auto sens = load(fs::path(out) / "sensitivity.json")["sensitivity"];
  EXPECT_NEAR(sens["causal_gap"]["shifted_ci95"][0].get<double>(), est["ci95"][0].get<double>() - 0.05, 1e-12);
  EXPECT_NEAR(sens["causal_gap"]["shifted_ci95"][1].get<double>(), est["ci95"][1].get<double>() + 0.02, 1e-12);
  EXPECT_EQ(sens["negative_controls"][0]["column"], "N");
}

TEST_F(Workspace, ReportWithoutArtifactsMarksMissing) {
  auto r = step("report");
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = load(fs::path(out) / "report.json");
  for (const char* k : {"2", "4", "5", "6", "7"}) EXPECT_EQ(rep["sections"][k]["status"], "missing") << k;
  EXPECT_FALSE(rep["sections"]["5"]["outputs"].contains("estimate"));
}

TEST_F(Workspace, SensitivityRefusesLaterEdit) {
  ASSERT_EQ(step("identify").code, 0);
  ASSERT_EQ(step("estimate").code, 0);
  auto sens = load(dir / "sensitivity.json");
  sens["gap"]["hi"] = 0.5;
  write(dir / "sensitivity.json", sens.dump(2));
  fs::last_write_time(dir / "sensitivity.json", fs::file_time_type::clock::now() + std::chrono::seconds(5));
  auto r = step("sensitivity");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("[Step 6]"), std::string::npos);
  EXPECT_NE(r.err.find("modified after the estimate"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(fs::path(out) / "sensitivity.json"));
}

TEST_F(Workspace, SensitivityRefusesChangedContentWithOldTimestamp) {
  ASSERT_EQ(step("identify").code, 0);
  ASSERT_EQ(step("estimate").code, 0);
  auto stamp = fs::last_write_time(dir / "sensitivity.json");
  auto sens = load(dir / "sensitivity.json");
  sens["negative_controls"] = Json::array();
  write(dir / "sensitivity.json", sens.dump(2));
  fs::last_write_time(dir / "sensitivity.json", stamp);
  auto r = step("sensitivity");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("differs from the one recorded"), std::string::npos) << r.err;
}

TEST_F(Workspace, RerunsAreByteIdenticalOutsideMetadata) {
  pipeline();
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().extension() == ".json")
      first[e.path().filename().string()] = roadmap::cli::without_metadata(load(e.path())).dump();
  fs::rename(out, dir / "out1");
  pipeline();
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().extension() != ".json") continue;
    auto name = e.path().filename().string();
    ASSERT_TRUE(first.count(name)) << name;
    EXPECT_EQ(first[name], roadmap::cli::without_metadata(load(e.path())).dump()) << name;
    ++compared;
  }
  EXPECT_EQ(compared, 8u);
}

TEST_F(Workspace, SimulateIsOutcomeBlindAndUsesAllEstimators) {
  ASSERT_EQ(step("identify").code, 0);
  auto r = step("simulate");
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = load(fs::path(out) / "simulate.json");
  EXPECT_TRUE(j["outcome_blind"].get<bool>());
  EXPECT_FALSE(j["inputs"].contains("data"));
  std::set<std::string> est;
  for (const auto& c : j["simulation"]["cells"]) est.insert(c["estimator"].get<std::string>());
  EXPECT_EQ(est, (std::set<std::string>{"unadjusted", "gcomp", "ipw", "tmle"}));
  EXPECT_EQ(j["designs"][0]["adjustment"], Json::array({"W"}));
  EXPECT_NEAR(j["simulation"]["truth_alt"]["value"].get<double>(), 0.23105857863000487, 1e-12);
  EXPECT_TRUE(fs::exists(fs::path(out) / "simulate.md"));
}

TEST_F(Workspace, SeedFlagOverridesConfig) {
  ASSERT_EQ(step("identify").code, 0);
  ASSERT_EQ(step("compare-designs", {"--seed", "99"}).code, 0);
  EXPECT_EQ(load(fs::path(out) / "compare-designs.json")["simulation"]["master_seed"], 99);
}

TEST_F(Workspace, UnknownConfigKeyIsUsageError) {
  auto cfg = load(dir / "study.json");
  cfg["estimaton"] = Json::object();
  write(dir / "study.json", cfg.dump());
  auto r = step("identify");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown key 'estimaton'"), std::string::npos) << r.err;
}

TEST_F(Workspace, DgpGraphMismatchIsDomainError) {
  write(dir / "alt.dgp", "W ~ Bernoulli(0.5);\nA ~ Bernoulli(0.5);\nY ~ Bernoulli(expit(-1 + 1.0*A));\n");
  auto r = step("simulate");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("[Step 5]"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"identify", "--bogus"}).code, 2);
  EXPECT_EQ(run({"identify", "--seed", "x"}).code, 2);
  auto missing = run({"identify", "--graph", "/nonexistent/graph.dag"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("[Step 3]"), std::string::npos);
  auto noGraph = run({"validate-dag", "--out", (fs::temp_directory_path() / "roadmap_cli_none").string()});
  EXPECT_EQ(noGraph.code, 2);
  EXPECT_NE(noGraph.err.find("[Step 1b]"), std::string::npos);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, GraphParseErrorReportsPosition) {
  auto path = fs::temp_directory_path() / "roadmap_cli_bad.dag";
  write(path, "graph g {\n  node A role=treatment\n  edge A -> ;\n}\n");
  auto r = run({"validate-dag", "--graph", path.string(), "--out", (fs::temp_directory_path() / "roadmap_cli_bad").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line "), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("[Step 1b]"), std::string::npos) << r.err;
  fs::remove(path);
}

TEST(Cli, CyclicGraphIsDomainError) {
  auto path = fs::temp_directory_path() / "roadmap_cli_cycle.dag";
  write(path, "graph g { node A role=treatment; node Y role=outcome; edge A -> Y; edge Y -> A; }");
  auto r = run({"validate-dag", "--graph", path.string(), "--out", (fs::temp_directory_path() / "roadmap_cli_cyc").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cyclic"), std::string::npos) << r.err;
  fs::remove(path);
}
