#include <gtest/gtest.h>

#include "roadmap/estimand.hpp"

using namespace roadmap;
using namespace roadmap::estimand;
using roadmap::graph::parse_graph;

namespace {

CausalEstimand make_estimand(Contrast c = Contrast::risk_difference) {
  CausalEstimand ce;
  ce.population = "adults with condition X";
  ce.outcome = "Y";
  ce.outcome_description = "event by 12 months";
  ce.contrast = c;
  return ce;
}

const char* kHealthcareAccess = R"(graph access {
  node age role=covariate; node biomarker role=covariate; node U latent;
  node A role=treatment; node C role=censoring; node Y role=outcome;
  edge age -> A; edge age -> Y; edge biomarker -> A; edge biomarker -> Y;
  edge U -> A; edge U -> Y; edge A -> Y; edge A -> C; edge age -> C;
})";

}  // namespace

TEST(CheckIdentification, RandomizedStructure) {
  auto g = parse_graph("graph rct { node W; node A role=treatment; node Y role=outcome; edge W -> Y; edge A -> Y; }");
  auto ir = check_identification(g, make_estimand());
  EXPECT_TRUE(ir.identified());
  ASSERT_FALSE(ir.adjustment_sets.empty());
  EXPECT_TRUE(ir.adjustment_sets.front().empty());
  ASSERT_EQ(ir.assumptions.size(), 3u);
  EXPECT_EQ(ir.assumptions[2].assumption, "positivity");
  EXPECT_EQ(ir.assumptions[2].verdict, Verdict::empirical);
}

TEST(CheckIdentification, LatentConfoundingNotIdentified) {
  auto ir = check_identification(parse_graph(kHealthcareAccess), make_estimand());
  EXPECT_FALSE(ir.identified());
  EXPECT_TRUE(ir.adjustment_sets.empty());
  EXPECT_EQ(ir.assumptions[0].verdict, Verdict::violated);
  auto open = ir.open_paths();
  ASSERT_FALSE(open.empty());
  EXPECT_EQ(open.front().to_string(), "A <- U -> Y");
  EXPECT_EQ(ir.assumptions[2].verdict, Verdict::empirical);
}

// Hand enumeration for W->A, W->Y, A->Y, A->C, W->C with Z = {W}:
//   backdoor graph (A's out-edges removed): only path A <- W -> Y, blocked at W.
//   censoring graph (C has no out-edges): paths C <- A <- W -> Y (blocked at A),
//   C <- W -> Y (blocked at W), C <- A -> Y (blocked at A), C <- W -> A -> Y
//   (blocked at A). Both conditions hold; {} fails the backdoor condition.
TEST(CheckIdentification, ConfoundedWithCensoring) {
  auto g = parse_graph(R"(graph g { node W; node A role=treatment; node C role=censoring; node Y role=outcome;
    edge W -> A; edge W -> Y; edge A -> Y; edge A -> C; edge W -> C; })");
  auto ir = check_identification(g, make_estimand());
  ASSERT_TRUE(ir.identified());
  EXPECT_EQ(ir.adjustment_sets, (std::vector<graph::NodeSet>{{"W"}}));
  EXPECT_EQ(ir.assumptions[0].verdict, Verdict::satisfied);
  EXPECT_EQ(ir.assumptions[1].verdict, Verdict::satisfied);
  ASSERT_EQ(ir.assumptions[0].evidence.size(), 1u);
  EXPECT_EQ(ir.assumptions[0].evidence[0].to_string(), "A <- W -> Y");
  EXPECT_EQ(ir.assumptions[0].evidence[0].blocking_node, "W");
  EXPECT_EQ(ir.assumptions[1].evidence.size(), 4u);
  for (const auto& w : ir.assumptions[1].evidence) EXPECT_TRUE(w.blocked) << w.to_string();
}

TEST(CheckIdentification, CensoringViolation) {
  auto g = parse_graph(R"(graph g { node U latent; node A role=treatment; node C role=censoring; node Y role=outcome;
    edge A -> Y; edge A -> C; edge U -> C; edge U -> Y; })");
  auto ir = check_identification(g, make_estimand());
  EXPECT_FALSE(ir.identified());
  EXPECT_EQ(ir.assumptions[0].verdict, Verdict::satisfied);
  EXPECT_EQ(ir.assumptions[1].verdict, Verdict::violated);
  EXPECT_EQ(ir.open_paths().at(0).to_string(), "C <- U -> Y");
}

TEST(CheckIdentification, NodeMismatch) {
  auto g = parse_graph("graph g { node A role=treatment; node Y role=outcome; node Z; edge A -> Y; }");
  auto ce = make_estimand();
  ce.outcome = "Q";
  EXPECT_THROW(check_identification(g, ce), DomainError);
  ce.outcome = "Z";
  EXPECT_THROW(check_identification(g, ce), DomainError);
  ce = make_estimand();
  ce.strategy0.treatment_level = 1;
  EXPECT_THROW(check_identification(g, ce), DomainError);
}

TEST(CompileEstimand, RiskDifferenceWithCovariate) {
  auto g = parse_graph(R"(graph g { node W; node A role=treatment; node C role=censoring; node Y role=outcome;
    edge W -> A; edge W -> Y; edge A -> Y; edge A -> C; })");
  auto ce = make_estimand();
  auto se = compile_statistical_estimand(ce, check_identification(g, ce), 0);
  EXPECT_EQ(se.adjustment_set, (graph::NodeSet{"W"}));
  EXPECT_EQ(se.formula(), "E_{W}(P[Y*|C=0,A=1,W] - P[Y*|C=0,A=0,W])");
  EXPECT_EQ(se.censoring, "C");
}

TEST(CompileEstimand, RiskRatioEmptyAdjustment) {
  auto g = parse_graph("graph g { node A role=treatment; node C role=censoring; node Y role=outcome; edge A -> Y; }");
  auto ce = make_estimand(Contrast::risk_ratio);
  auto se = compile_statistical_estimand(ce, check_identification(g, ce));
  EXPECT_TRUE(se.adjustment_set.empty());
  EXPECT_EQ(se.contrast, Contrast::risk_ratio);
  EXPECT_EQ(se.formula(), "P[Y*|C=0,A=1] / P[Y*|C=0,A=0]");
}

TEST(CompileEstimand, NotIdentifiedCarriesOpenPath) {
  auto ce = make_estimand();
  auto ir = check_identification(parse_graph(kHealthcareAccess), ce);
  try {
    compile_statistical_estimand(ce, ir, 0);
    FAIL();
  } catch (const NotIdentifiedError& e) {
    ASSERT_FALSE(e.witnesses().empty());
    EXPECT_EQ(e.witnesses()[0].to_string(), "A <- U -> Y");
    EXPECT_NE(std::string(e.what()).find("A <- U -> Y"), std::string::npos);
  }
}

TEST(CompileEstimand, BadIndexAndDeterminism) {
  auto g = parse_graph(R"(graph g { node Z; node P; node Q; node A role=treatment; node Y role=outcome;
    edge Z -> P; edge P -> A; edge Z -> Q; edge Q -> Y; edge A -> Y; })");
  auto ce = make_estimand();
  auto ir = check_identification(g, ce);
  ASSERT_EQ(ir.adjustment_sets.size(), 3u);
  EXPECT_THROW(compile_statistical_estimand(ce, ir, 3), DomainError);
  EXPECT_EQ(compile_statistical_estimand(ce, ir, 1), compile_statistical_estimand(ce, ir, 1));
  EXPECT_EQ(compile_statistical_estimand(ce, ir, 1).adjustment_set, (graph::NodeSet{"Q"}));
}
