#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "desklm/error.hpp"
#include "desklm/graph.hpp"
#include "support.hpp"

namespace desklm {
namespace {

using testing::gradient_check;
using TD = Tensor<double>;

TD random_tensor(Shape shape, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(gen);
  return TD::from(std::move(shape), std::move(v), true);
}

TEST(Tensor, ShapeAndDataAgree) {
  auto t = Tensor<float>::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor<float>::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, CopiesAliasClonesDoNot) {
  auto a = Tensor<float>::full({2}, 1.0f);
  auto alias = a;
  auto copy = a.clone();
  alias.mutable_data()[0] = 5.0f;
  EXPECT_EQ(a.at(0), 5.0f);
  EXPECT_EQ(copy.at(0), 1.0f);
  EXPECT_TRUE(a.same_storage(alias));
  EXPECT_FALSE(a.same_storage(copy));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Graph<double> g;
  auto eye = TD::from({2, 2}, {1, 0, 0, 1});
  auto m = TD::from({2, 2}, {1, 2, 3, 4});
  auto out = g.matmul(eye, m);
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()),
            (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandProduct) {
  Graph<double> g;
  auto out = g.matmul(TD::from({2, 2}, {1, 0, 0, 0}), TD::from({2, 1}, {5, 7}));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out.at(0), 5.0);
  EXPECT_EQ(out.at(1), 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph<double> g;
  try {
    g.matmul(TD::zeros({2, 3}), TD::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(1);
  auto a = random_tensor({3, 4}, gen);
  auto b = random_tensor({4, 2}, gen);
  const auto r = gradient_check({{"a", a}, {"b", b}},
                                [&](Graph<double>& g) { return g.sum(g.matmul(a, b)); });
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Softmax, Examples) {
  Graph<double> g;
  auto s = g.softmax(TD::from({1, 2}, {0, 0}), 1);
  EXPECT_DOUBLE_EQ(s.at(0), 0.5);
  auto big = g.softmax(TD::from({1, 2}, {1000, 1000}), 1);
  EXPECT_DOUBLE_EQ(big.at(0), 0.5);
  EXPECT_DOUBLE_EQ(big.at(1), 0.5);
  auto third = g.softmax(TD::from({1, 2}, {0, std::log(3.0)}), 1);
  EXPECT_NEAR(third.at(0), 0.25, 1e-15);
  EXPECT_NEAR(third.at(1), 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneForExtremeInputs) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> mag(-700, 700);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(12);
    for (auto& x : v) x = mag(gen);
    Graph<float> g;
    std::vector<float> f(v.begin(), v.end());
    auto s = g.softmax(Tensor<float>::from({3, 4}, f), 1);
    for (int r = 0; r < 3; ++r) {
      double sum = 0;
      for (int c = 0; c < 4; ++c) {
        EXPECT_GE(s.at(r * 4 + c), 0.0f);
        sum += s.at(r * 4 + c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, GradientAlongEitherAxis) {
  std::mt19937_64 gen(3);
  auto x = random_tensor({3, 4}, gen);
  auto w = random_tensor({3, 4}, gen);
  for (std::size_t axis : {0u, 1u}) {
    const auto r = gradient_check(
        {{"x", x}}, [&](Graph<double>& g) { return g.sum(g.mul(g.softmax(x, axis), w)); });
    EXPECT_LT(r.max_rel, 1e-4) << "axis " << axis << " " << r.worst;
  }
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  Graph<double> g;
  auto out = g.layer_norm(TD::full({1, 4}, 3.0), TD::full({4}, 1.0), TD::zeros({4}), 1e-5);
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(LayerNorm, NormalizedRowIsFixedPoint) {
  Graph<double> g;
  auto out = g.layer_norm(TD::from({1, 2}, {1, -1}), TD::full({2}, 1.0), TD::zeros({2}), 1e-12);
  EXPECT_NEAR(out.at(0), 1.0, 1e-9);
  EXPECT_NEAR(out.at(1), -1.0, 1e-9);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(4);
  auto x = random_tensor({3, 5}, gen);
  auto gain = random_tensor({5}, gen);
  auto bias = random_tensor({5}, gen);
  auto w = random_tensor({3, 5}, gen);
  const auto r = gradient_check({{"x", x}, {"gain", gain}, {"bias", bias}}, [&](Graph<double>& g) {
    return g.sum(g.mul(g.layer_norm(x, gain, bias, 1e-5), w));
  });
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Graph<double> g;
  std::vector<std::int32_t> targets = {0, 5, 15};
  auto loss = g.cross_entropy(TD::zeros({3, 16}), targets);
  EXPECT_NEAR(loss.item(), std::log(16.0), 1e-12);
}

TEST(CrossEntropy, SaturatedCorrectLogit) {
  Graph<double> g;
  std::vector<double> logits(4, 0.0);
  logits[2] = 20.0;
  std::vector<std::int32_t> target = {2};
  auto loss = g.cross_entropy(TD::from({1, 4}, logits), target);
  EXPECT_LT(loss.item(), 1e-8);
}

TEST(CrossEntropy, MatchesBruteForceWithMaskAndReduction) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = random_tensor({6, 7}, gen, 3.0);
    auto targets = testing::random_ids(6, 7, gen);
    std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1};
    double sum = 0;
    for (int i = 0; i < 6; ++i) {
      if (!mask[i]) continue;
      double z = 0;
      for (int v = 0; v < 7; ++v) z += std::exp(logits.at(i * 7 + v));
      sum -= logits.at(i * 7 + targets[i]) - std::log(z);
    }
    Graph<double> g;
    const std::span<const std::uint8_t> m(mask);
    EXPECT_NEAR(g.cross_entropy(logits, targets, m, Reduction::kSum).item(), sum, 1e-9);
    EXPECT_NEAR(g.cross_entropy(logits, targets, m).item(), sum / 4, 1e-9);
  }
}

TEST(CrossEntropy, EmptySelectionIsDegenerate) {
  Graph<double> g;
  std::vector<std::int32_t> targets = {0, 1};
  std::vector<std::uint8_t> mask = {0, 0};
  EXPECT_THROW(g.cross_entropy(TD::zeros({2, 3}), targets, std::span<const std::uint8_t>(mask)),
               DegenerateBatchError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(6);
  auto logits = random_tensor({4, 5}, gen);
  std::vector<std::int32_t> targets = {1, 0, 4, 2};
  const auto r = gradient_check(
      {{"logits", logits}}, [&](Graph<double>& g) { return g.cross_entropy(logits, targets); });
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Backward, SumGivesOnes) {
  auto x = TD::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Graph<double> g;
  g.backward(g.sum(x));
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquareAtThree) {
  auto x = TD::scalar(3.0, true);
  Graph<double> g;
  g.backward(g.mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SecondCallRejected) {
  auto x = TD::scalar(1.0, true);
  Graph<double> g;
  auto loss = g.mul(x, x);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), GraphError);
}

TEST(Backward, NonScalarRejected) {
  auto x = TD::from({2}, {1, 2}, true);
  Graph<double> g;
  EXPECT_THROW(g.backward(g.scale(x, 2.0)), DimensionError);
}

TEST(Backward, ForeignLossRejected) {
  auto x = TD::scalar(1.0, true);
  Graph<double> a;
  Graph<double> b;
  auto loss = a.mul(x, x);
  EXPECT_THROW(b.backward(loss), GraphError);
}

TEST(Backward, GradsIsolatedFromUnrelatedGraphContents) {
  std::mt19937_64 gen(7);
  auto x = random_tensor({2, 3}, gen);
  auto w = random_tensor({3, 2}, gen);
  auto noise = random_tensor({4, 4}, gen);
  auto chain = [&](Graph<double>& g) { return g.sum(g.gelu(g.matmul(x, w))); };
  Graph<double> plain;
  plain.backward(chain(plain));
  const std::vector<double> expected(x.grad().begin(), x.grad().end());
  x.clear_grad();
  w.clear_grad();
  Graph<double> busy;
  auto unrelated = busy.softmax(busy.matmul(noise, noise), 1);
  (void)unrelated;
  busy.backward(chain(busy));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), expected);
}

TEST(Ops, ElementwiseGradients) {
  std::mt19937_64 gen(8);
  auto a = random_tensor({2, 3}, gen);
  auto b = random_tensor({2, 3}, gen);
  auto bias = random_tensor({3}, gen);
  const auto r = gradient_check({{"a", a}, {"b", b}, {"bias", bias}}, [&](Graph<double>& g) {
    auto x = g.add_row(g.sub(g.mul(a, b), g.scale(a, 0.3)), bias);
    auto y = g.log_sigmoid(g.add_scalar(g.gelu(x), 0.1));
    auto z = g.concat_cols(std::vector<TD>{g.slice_cols(y, 1, 2), g.transpose(g.transpose(y))});
    return g.mean(z);
  });
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Ops, EmbeddingAndCausalMaskGradients) {
  std::mt19937_64 gen(9);
  auto table = random_tensor({5, 3}, gen);
  std::vector<std::int32_t> ids = {4, 1, 4};
  const auto r = gradient_check({{"table", table}}, [&](Graph<double>& g) {
    auto e = g.embedding(table, ids);
    auto scores = g.causal_mask(g.matmul_nt(e, e));
    return g.sum(g.mul(g.softmax(scores, 1), g.matmul_nt(e, e)));
  });
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Ops, DropoutIsInvertedAndSeeded) {
  auto x = Tensor<double>::full({1, 2000}, 1.0);
  Rng a(11);
  Rng b(11);
  Graph<double> g;
  auto y1 = g.dropout(x, 0.25, a);
  auto y2 = g.dropout(x, 0.25, b);
  double sum = 0;
  for (std::size_t i = 0; i < y1.numel(); ++i) {
    EXPECT_EQ(y1.at(i), y2.at(i));
    EXPECT_TRUE(y1.at(i) == 0.0 || std::abs(y1.at(i) - 1.0 / 0.75) < 1e-12);
    sum += y1.at(i);
  }
  EXPECT_NEAR(sum / 2000, 1.0, 0.1);
  Rng c(1);
  auto same = g.dropout(x, 0.0, c);
  EXPECT_TRUE(same.same_storage(x) || same.at(0) == 1.0);
}

}  // namespace
}  // namespace desklm
