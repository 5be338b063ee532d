#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "desklm/dpo.hpp"
#include "desklm/error.hpp"
#include "support.hpp"

namespace desklm {
namespace {

using testing::random_model;
using testing::tiny_config;

TEST(DpoLoss, EqualPolicyAndReferenceGivesLog2) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-50, 0);
  for (int i = 0; i < 50; ++i) {
    const double c = u(gen), r = u(gen);
    EXPECT_NEAR(dpo_loss(c, r, c, r, 0.1), std::numbers::ln2, 1e-12);
  }
}

TEST(DpoLoss, MatchesDirectFormulaAndStaysFinite) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-20, 0);
  for (int i = 0; i < 100; ++i) {
    const double pc = u(gen), pr = u(gen), rc = u(gen), rr = u(gen), beta = 0.05 + i * 0.01;
    const double m = beta * ((pc - rc) - (pr - rr));
    EXPECT_NEAR(implicit_reward_margin(pc, pr, rc, rr, beta), m, 1e-12);
    EXPECT_NEAR(dpo_loss(pc, pr, rc, rr, beta), std::log1p(std::exp(-m)), 1e-12);
  }
  EXPECT_NEAR(dpo_loss(0, 1e4, 0, 0, 1.0), 1e4, 1e-9);
  EXPECT_NEAR(dpo_loss(1e4, 0, 0, 0, 1.0), 0.0, 1e-12);
}

TEST(DpoLoss, GraphFormMatchesScalarAndGradient) {
  for (double pc : {-3.0, -1.0, 0.5}) {
    Graph<double> g;
    auto c = Tensor<double>::scalar(pc, true);
    auto r = Tensor<double>::scalar(-2.0, true);
    auto loss = dpo_loss<double>(g, c, r, -1.5, -2.5, 0.3);
    EXPECT_NEAR(loss.item(), dpo_loss(pc, -2.0, -1.5, -2.5, 0.3), 1e-12);
    g.backward(loss);
    const double m = implicit_reward_margin(pc, -2.0, -1.5, -2.5, 0.3);
    const double s = 1.0 / (1.0 + std::exp(m));  // sigmoid(-m)
    EXPECT_NEAR(c.grad()[0], -0.3 * s, 1e-12);
    EXPECT_NEAR(r.grad()[0], 0.3 * s, 1e-12);
  }
}

TEST(DpoLoss, ModelGradientPassesFiniteDifference) {
  const auto base = random_model<double>(tiny_config(), 3);
  LoraConfig lc;
  lc.rank = 2;
  lc.dropout = 0.0;
  Rng rng(3);
  auto policy = AdaptedModel<double>::attach(base, lc, rng);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n(0, 0.3);
  for (auto& [name, t] : policy.trainable_parameters())
    for (auto& x : t.mutable_data()) x = n(gen);
  const std::vector<TokenId> prompt = {1, 6}, chosen = {7, 8, 2}, rejected = {9, 2};
  const double rc = base.sequence_logprob(prompt, chosen);
  const double rr = base.sequence_logprob(prompt, rejected);
  const auto report = testing::gradient_check(policy.trainable_parameters(), [&](Graph<double>& g) {
    auto c = policy.base().sequence_logprob(g, prompt, chosen, policy.options());
    auto r = policy.base().sequence_logprob(g, prompt, rejected, policy.options());
    return dpo_loss<double>(g, c, r, rc, rr, 0.1);
  });
  EXPECT_LT(report.max_rel, 1e-4) << report.worst;
}

TEST(DpoData, ParseAndSerializeRoundTrip) {
  const std::vector<DpoTriple> t = {{"问题", "好的回答", "差的回答"}, {"q \"x\"", "a\nb", "c"}};
  EXPECT_EQ(parse_dpo_jsonl(dpo_to_jsonl(t)), t);
}

TEST(DpoData, MalformedLinesNameTheLine) {
  const std::string text =
      "{\"prompt\":\"p\",\"chosen\":\"a\",\"rejected\":\"b\"}\n"
      "{\"prompt\":\"p\",\"chosen\":\"a\"}\n";
  try {
    parse_dpo_jsonl(text, "f.jsonl");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("f.jsonl:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_dpo_jsonl("{\"prompt\":\"p\",\"chosen\":\"a\",\"rejected\":\"b\",\"x\":1}"),
               FormatError);
  EXPECT_THROW(parse_dpo_jsonl("{\"prompt\":\"p\",\"chosen\":1,\"rejected\":\"b\"}"), FormatError);
  EXPECT_THROW((DpoTriple{"p", "same", "same"}.validate()), std::invalid_argument);
}

TEST(DpoTrain, EmptyDatasetIsDegenerate) {
  const auto base = random_model<double>(tiny_config(), 4);
  LoraConfig lc;
  lc.rank = 2;
  Rng rng(4);
  auto policy = AdaptedModel<double>::attach(base, lc, rng);
  EXPECT_THROW(train_dpo(policy, base, {}, DpoConfig{}, rng), DegenerateBatchError);
}

TEST(DpoTrain, ShortRunSeparatesChosenFromRejected) {
  const auto base = random_model<double>(tiny_config(12, 8, 1), 5, 0.3);
  LoraConfig lc;
  lc.rank = 2;
  lc.dropout = 0.0;
  Rng rng(5);
  auto policy = AdaptedModel<double>::attach(base, lc, rng);
  std::vector<DpoExample> ex = {
      {{1, 5}, {6, 7, 2}, {8, 9, 2}},
      {{1, 6}, {10, 2}, {11, 2}},
      {{1, 7}, {5, 5, 2}, {9, 2}},
      {{1, 8}, {7, 2}, {6, 6, 2}},
  };
  DpoConfig cfg;
  cfg.train.epochs = 40;
  cfg.train.lr = 2e-2;
  const auto result = train_dpo(policy, base, ex, cfg, rng);
  EXPECT_EQ(result.ref_chosen.size(), ex.size());
  EXPECT_EQ(result.train.steps, 160);
  for (std::size_t i = 0; i < ex.size(); ++i)
    EXPECT_DOUBLE_EQ(result.ref_chosen[i], base.sequence_logprob(ex[i].prompt, ex[i].chosen));
  for (double m : reward_margins(policy, result, ex, cfg.beta)) EXPECT_GT(m, 0.0);
  // The reference is untouched.
  for (const auto& [path, t] : base.params().entries()) EXPECT_FALSE(t.has_grad()) << path;
}

}  // namespace
}  // namespace desklm
