#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "desklm/error.hpp"
#include "desklm/eval.hpp"
#include "desklm/metrics.hpp"
#include "oracles.hpp"

namespace desklm::eval {
namespace {

using nlohmann::json;

TEST(Metrics, PrfCountsHandExample) {
  PrfCounts c{2, 4, 5};
  EXPECT_DOUBLE_EQ(c.precision(), 50.0);
  EXPECT_DOUBLE_EQ(c.recall(), 40.0);
  EXPECT_NEAR(c.f1(), 2 * 50.0 * 40.0 / 90.0, 1e-12);
  EXPECT_EQ(PrfCounts{}.f1(), 0.0);
}

TEST(Metrics, StrictSpanNeedsExactBoundaries) {
  std::vector<std::vector<SpanEntity>> gold = {{{0, 3, "dis"}, {5, 7, "sym"}}};
  std::vector<std::vector<SpanEntity>> pred = {{{0, 3, "dis"}, {5, 8, "sym"}}};
  EXPECT_DOUBLE_EQ(micro_f1_strict(gold, pred), 50.0);
  pred = {{{0, 3, "sym"}}};
  EXPECT_DOUBLE_EQ(micro_f1_strict(gold, pred), 0.0);
  pred = {{{3, 3, "dis"}}};
  EXPECT_THROW(micro_f1_strict(gold, pred), std::invalid_argument);
}

TEST(Metrics, DuplicatePredictionsCountOnce) {
  std::vector<TupleSet> gold = {{{"a", "r", "b"}}};
  std::vector<TupleSet> pred = {{{"a", "r", "b"}, {"a", "r", "b"}}};
  EXPECT_DOUBLE_EQ(micro_f1(gold, pred), 100.0);
  EXPECT_THROW(micro_f1(gold, {}), DimensionError);
}

TEST(Metrics, MacroF1AveragesLabelsIncludingAbsentOnes) {
  const std::vector<std::string> gold = {"a", "a", "b"};
  const std::vector<std::string> pred = {"a", "b", "b"};
  // a: P 1, R .5 -> 66.67; b: P .5, R 1 -> 66.67; c absent -> 0
  EXPECT_NEAR(macro_f1(gold, pred, {"a", "b"}), 200.0 / 3.0, 1e-9);
  EXPECT_NEAR(macro_f1(gold, pred, {"a", "b", "c"}), 400.0 / 9.0, 1e-9);
  EXPECT_THROW(macro_f1(gold, pred, {"a"}), std::invalid_argument);
}

TEST(Metrics, MrrCountsOnlyTopTen) {
  std::vector<std::string> eleven;
  for (int i = 0; i < 11; ++i) eleven.push_back("d" + std::to_string(i));
  EXPECT_DOUBLE_EQ(mrr_at_10({eleven}, {"d0"}), 100.0);
  EXPECT_DOUBLE_EQ(mrr_at_10({eleven}, {"d3"}), 25.0);
  EXPECT_DOUBLE_EQ(mrr_at_10({eleven}, {"d10"}), 0.0);
  EXPECT_THROW(mrr_at_10({{"x", "x"}}, {"x"}), std::invalid_argument);
}

TEST(Metrics, TokenizeModes) {
  EXPECT_EQ(tokenize("a b  c", TokenMode::kAuto), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(tokenize("头 痛", TokenMode::kAuto), (std::vector<std::string>{"头", "痛"}));
  EXPECT_EQ(tokenize("ab c", TokenMode::kChar), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Metrics, RougeLHandExample) {
  // LCS("患者头痛发热", "患者发热") = 4: P 4/6, R 1 -> F 80
  EXPECT_NEAR(rouge_l("患者头痛发热", "患者发热"), 80.0, 1e-9);
  EXPECT_DOUBLE_EQ(rouge_l("", "x"), 0.0);
  EXPECT_THROW(rouge_l("x", ""), std::invalid_argument);
}

TEST(Metrics, BleuIdentityAndBrevity) {
  EXPECT_NEAR(sentence_bleu("a b c d e", "a b c d e"), 100.0, 1e-9);
  // Two tokens against four: every order has one fewer match than total, and
  // the brevity penalty is exp(1 - 4/2).
  const double expect = 100.0 * std::exp(-1.0) * std::pow((3.0 / 3) * (2.0 / 2) * 1 * 1, 0.25);
  EXPECT_NEAR(sentence_bleu("a b", "a b c d"), expect, 1e-9);
  EXPECT_DOUBLE_EQ(sentence_bleu("", "a"), 0.0);
}

TEST(Metrics, EntityF1AndMcq) {
  EXPECT_DOUBLE_EQ(entity_f1({"服用阿莫西林"}, {"阿莫西林和布洛芬"}, {"阿莫西林", "布洛芬"}),
                   100.0 * 2 * 1 / 3.0);
  EXPECT_DOUBLE_EQ(mcq_accuracy({"A", "B", "C", "D"}, {"A", "B", "D", "D"}), 75.0);
  EXPECT_THROW(mcq_accuracy({"A"}, {"E"}), std::invalid_argument);
}

TEST(Metrics, NormalizeFullWidth) {
  EXPECT_EQ(normalize_text("ＡＢＣ１２３　Ok"), "abc123 ok");
  EXPECT_EQ(normalize_text("肺炎"), "肺炎");
}

TEST(Metrics, SmallRandomInstancesAgreeWithOracle) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> tok(0, 3);
  const std::vector<std::string> alphabet = {"甲", "乙", "丙", "丁"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> c(1 + trial % 9), r(1 + (trial * 7) % 9);
    for (auto& x : c) x = alphabet[tok(gen)];
    for (auto& x : r) x = alphabet[tok(gen)];
    std::string cs, rs;
    for (auto& x : c) cs += x;
    for (auto& x : r) rs += x;
    EXPECT_NEAR(rouge_l(cs, rs), oracle::rouge_l(c, r), 1e-9) << cs << " / " << rs;
    EXPECT_NEAR(sentence_bleu(cs, rs), oracle::bleu(c, r), 1e-9) << cs << " / " << rs;
  }
}

TEST(Registry, EighteenTasksAndLookup) {
  const auto& reg = task_registry();
  EXPECT_EQ(reg.size(), 18u);
  std::size_t results = 0, cblue = 0;
  for (const auto& t : reg) {
    results += t.result_ids.size();
    if (t.cblue) cblue += t.result_ids.size();
  }
  EXPECT_EQ(results, 19u);
  EXPECT_EQ(cblue, 18u);
  EXPECT_FALSE(find_task("ClinicalQA").cblue);
  EXPECT_THROW(find_task("CMeXX"), std::invalid_argument);
}

TEST(Aggregate, MeanAndDuplicateCheck) {
  EXPECT_DOUBLE_EQ(aggregate_macro({{"a", "m", 10}, {"b", "m", 20}, {"c", "m", 60}}), 30.0);
  EXPECT_THROW(aggregate_macro({}), std::invalid_argument);
  EXPECT_THROW(aggregate_macro({{"a", "m", 1}, {"a", "m", 2}}), std::invalid_argument);
}

TEST(ScoreTask, AlignsByIdAndRejectsMismatches) {
  EvalTask t;
  t.task_id = "KUAKE-QIC";
  t.gold = {json{{"id", 1}, {"label", "x"}}, json{{"id", "2"}, {"label", "y"}}};
  t.pred = {json{{"id", "2"}, {"label", "y"}}, json{{"id", 1}, {"label", "z"}}};
  const auto r = score_task(t);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r[0].score, 50.0);
  t.pred.pop_back();
  EXPECT_THROW(score_task(t), FormatError);
  t.pred = {json{{"id", 1}, {"label", "x"}}, json{{"id", 1}, {"label", "x"}}};
  EXPECT_THROW(score_task(t), FormatError);
}

TEST(ScoreTask, SymptomTaskYieldsUtteranceAndDialogResults) {
  EvalTask t;
  t.task_id = "IMCS-V2-SR";
  auto sym = [](const std::string& term, const std::string& status) {
    return json{{"term", term}, {"status", status}};
  };
  t.gold = {json{{"id", 1}, {"dialog", "d1"}, {"symptoms", {sym("咳嗽", "1")}}},
            json{{"id", 2}, {"dialog", "d1"}, {"symptoms", {sym("发热", "1")}}}};
  // Right symptoms, attached to the wrong utterances.
  t.pred = {json{{"id", 1}, {"symptoms", {sym("发热", "1")}}},
            json{{"id", 2}, {"symptoms", {sym("咳嗽", "1")}}}};
  const auto r = score_task(t);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].task_id, "IMCS-V2-SR-Utterance-Level");
  EXPECT_DOUBLE_EQ(r[0].score, 0.0);
  EXPECT_EQ(r[1].task_id, "IMCS-V2-SR-Dialog-Level");
  EXPECT_DOUBLE_EQ(r[1].score, 100.0);
}

TEST(ScoreTask, LabelTasksNeedLabelSets) {
  EvalTask t;
  t.task_id = "CHIP-CTC";
  t.gold = {json{{"id", 1}, {"label", "Age"}}};
  t.pred = {json{{"id", 1}, {"label", "Age"}}};
  EXPECT_THROW(score_task(t), ConfigError);
  t.labels = {"Age", "Allergy"};
  EXPECT_DOUBLE_EQ(score_task(t)[0].score, 50.0);
}

TEST(ScoreTask, NormalizationIsOptIn) {
  EvalTask t;
  t.task_id = "KUAKE-QTR";
  t.gold = {json{{"id", 1}, {"label", "Ａ"}}};
  t.pred = {json{{"id", 1}, {"label", "a"}}};
  EXPECT_DOUBLE_EQ(score_task(t)[0].score, 0.0);
  t.normalize = true;
  EXPECT_DOUBLE_EQ(score_task(t)[0].score, 100.0);
}

TEST(Report, OverallExcludesClinicalQaAndRendersJson) {
  const auto rep = MetricReport::build({{"CMeEE", "span_micro_f1", 40.0},
                                        {"KUAKE-IR", "mrr_at_10", 60.0},
                                        {"ClinicalQA", "mcq_accuracy", 99.0}});
  ASSERT_TRUE(rep.cblue_overall.has_value());
  EXPECT_DOUBLE_EQ(*rep.cblue_overall, 50.0);
  const auto j = rep.to_json();
  EXPECT_DOUBLE_EQ(j.at("overall").get<double>(), 50.0);
  EXPECT_DOUBLE_EQ(j.at("per_task").at("ClinicalQA").at("score").get<double>(), 99.0);
  EXPECT_NE(rep.table().find("ClinicalQA"), std::string::npos);
  EXPECT_FALSE(MetricReport::build({{"ClinicalQA", "mcq_accuracy", 1.0}}).cblue_overall);
}

}  // namespace
}  // namespace desklm::eval
