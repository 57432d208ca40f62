// Copyright 2026 The QVI Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <numbers>
#include <vector>

#include "gtest/gtest.h"
#include "qvi/error.h"
#include "qvi/gradcheck.h"
#include "qvi/graph.h"
#include "qvi/rng.h"
#include "qvi/tensor.h"
#include "test_util.h"

namespace qvi {
namespace {

using testing::MaxAbsDiff;
using testing::RandomTensor;
using testing::WeightedSum;

constexpr double kE = std::numbers::e;

TEST(TensorTest, FromDataChecksElementCount) {
  EXPECT_THROW(Tensor::FromData({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::Zeros({0, 3}), DimensionError);
  Tensor t = Tensor::FromData({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at({1, 2}), 6.0);
  EXPECT_EQ(t.dim(-1), 3u);
}

TEST(MatMulTest, IdentityAndHandCase) {
  Graph g;
  Tensor eye = Tensor::FromData({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::FromData({2, 2}, {3, 4, 5, 6});
  Tensor y = g.MatMul(eye, b);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            (std::vector<double>{3, 4, 5, 6}));

  Tensor row = Tensor::FromData({1, 2}, {1, 2});
  Tensor col = Tensor::FromData({2, 1}, {3, 4});
  EXPECT_EQ(g.MatMul(row, col).item(), 11.0);
}

TEST(MatMulTest, ShapeMismatchNamesBothShapes) {
  Graph g;
  try {
    g.MatMul(Tensor::Zeros({2, 3}), Tensor::Zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] and [2x3]"), std::string::npos) << msg;
  }
}

TEST(MatMulTest, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor a = RandomTensor({3, 4}, rng);
  Tensor b = RandomTensor({4, 2}, rng);
  Tensor w = RandomTensor({3, 2}, rng);
  Tensor inputs[] = {a, b};
  auto report = Gradcheck(
      [&](Graph& g) { return WeightedSum(g, g.MatMul(a, b), w); }, inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(MatMulTest, BatchedAndSharedWeightGradients) {
  Rng rng(12);
  Tensor a = RandomTensor({2, 3, 4}, rng);
  Tensor b = RandomTensor({2, 4, 5}, rng);
  Tensor shared = RandomTensor({4, 5}, rng);
  Tensor w = RandomTensor({2, 3, 5}, rng);
  Tensor inputs[] = {a, b, shared};
  auto report = Gradcheck(
      [&](Graph& g) {
        return g.Add(WeightedSum(g, g.MatMul(a, b), w),
                     WeightedSum(g, g.MatMul(a, shared), w));
      },
      inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(TransposeTest, SwapsLastAxes) {
  Graph g;
  Tensor x = Tensor::FromData({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = g.Transpose(x);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 2}));
  EXPECT_EQ(y.at({0, 2, 1}), 6.0);
  EXPECT_EQ(y.at({0, 1, 0}), 2.0);
}

TEST(RowSoftmaxTest, Examples) {
  Graph g;
  Tensor y = g.RowSoftmax(Tensor::FromData({1, 3}, {0, 0, 0}));
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  y = g.RowSoftmax(Tensor::FromData({1, 2}, {1, 0}));
  EXPECT_NEAR(y[0], kE / (kE + 1), 1e-15);
  EXPECT_NEAR(y[1], 1 / (kE + 1), 1e-15);

  Mask mask{{1, 3}, {1, 1, 0}};
  y = g.RowSoftmax(Tensor::FromData({1, 3}, {5, 5, -INFINITY}), &mask);
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
  EXPECT_EQ(y[2], 0.0);
}

TEST(RowSoftmaxTest, FullyMaskedRowIsDegenerate) {
  Graph g;
  Mask mask{{2, 2}, {1, 0, 0, 0}};
  EXPECT_THROW(g.RowSoftmax(Tensor::Zeros({2, 2}), &mask),
               DegenerateMaskError);
}

TEST(RowSoftmaxTest, OverflowSafe) {
  Graph g;
  Tensor y = g.RowSoftmax(Tensor::FromData({1, 3}, {1e4, 1e4 - 1, -1e4}));
  EXPECT_TRUE(y.AllFinite());
  EXPECT_NEAR(y[0] + y[1] + y[2], 1.0, 1e-12);
}

TEST(RowSoftmaxTest, RowsSumToOneAndMaskedGradsAreZero) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.UniformInt(6);
    const std::size_t cols = 1 + rng.UniformInt(8);
    Tensor x = RandomTensor({rows, cols}, rng, -20, 20, true);
    Mask mask{{rows, cols}, std::vector<std::uint8_t>(rows * cols)};
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c)
        mask.keep[r * cols + c] = rng.Uniform() < 0.6;
      mask.keep[r * cols + rng.UniformInt(cols)] = 1;
    }
    Graph g;
    Tensor y = g.RowSoftmax(x, &mask);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        EXPECT_GE(y[r * cols + c], 0.0);
        s += y[r * cols + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    Tensor w = RandomTensor({rows, cols}, rng);
    g.Backward(WeightedSum(g, y, w));
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!mask[i]) EXPECT_EQ(x.grad()[i], 0.0);
  }
}

TEST(RowSoftmaxTest, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x = RandomTensor({3, 4}, rng);
  Tensor w = RandomTensor({3, 4}, rng);
  Mask mask{{3, 4}, {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1}};
  Tensor inputs[] = {x};
  auto report = Gradcheck(
      [&](Graph& g) { return WeightedSum(g, g.RowSoftmax(x, &mask), w); },
      inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(ElementwiseTest, Examples) {
  Graph g;
  Tensor z = g.Mul(Tensor::FromData({3}, {1, 2, 3}), Tensor::Zeros({3}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  Tensor p = g.Mul(Tensor::FromData({2}, {1, 2}), Tensor::FromData({2}, {3, 4}));
  EXPECT_EQ(p[0], 3.0);
  EXPECT_EQ(p[1], 8.0);
}

TEST(ElementwiseTest, PerRowBroadcastGradientIsRowSum) {
  Rng rng(8);
  Tensor a = RandomTensor({2, 3}, rng, -1, 1, true);
  Tensor b = RandomTensor({2, 1}, rng, -1, 1, true);
  Tensor w = RandomTensor({2, 3}, rng);
  {
    Graph g;
    g.Backward(WeightedSum(g, g.Add(a, b), w));
    for (std::size_t r = 0; r < 2; ++r)
      EXPECT_NEAR(b.grad()[r], w[3 * r] + w[3 * r + 1] + w[3 * r + 2], 1e-15);
  }
  for (BinaryOp op : {BinaryOp::kAdd, BinaryOp::kSub, BinaryOp::kMul}) {
    Tensor inputs[] = {a, b};
    auto report = Gradcheck(
        [&](Graph& g) { return WeightedSum(g, g.Elementwise(op, a, b), w); },
        inputs);
    EXPECT_LT(report.max_rel_error, 1e-6);
  }
}

TEST(ElementwiseTest, LeadingAxisBroadcastGradient) {
  Rng rng(9);
  Tensor a = RandomTensor({2, 3, 4}, rng);
  Tensor b = RandomTensor({2, 1, 4}, rng);
  Tensor c = RandomTensor({4}, rng);
  Tensor w = RandomTensor({2, 3, 4}, rng);
  Tensor inputs[] = {a, b, c};
  auto report = Gradcheck(
      [&](Graph& g) { return WeightedSum(g, g.Mul(g.Mul(a, b), c), w); },
      inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(ElementwiseTest, NonBroadcastableIsDimensionError) {
  Graph g;
  EXPECT_THROW(g.Add(Tensor::Zeros({2, 3}), Tensor::Zeros({3, 1})),
               DimensionError);
  EXPECT_THROW(g.Mul(Tensor::Zeros({3}), Tensor::Zeros({2, 3})),
               DimensionError);
}

TEST(SigmoidTest, ValuesAndSaturation) {
  Graph g;
  Tensor y = g.Sigmoid(Tensor::FromData({3}, {0, 1000, -1000}));
  EXPECT_EQ(y[0], 0.5);
  EXPECT_NEAR(y[1], 1.0, 1e-16);
  EXPECT_GE(y[2], 0.0);
  EXPECT_TRUE(y.AllFinite());
}

TEST(SigmoidTest, GradientMatchesClosedFormAndFiniteDifferences) {
  Rng rng(21);
  Tensor x = RandomTensor({6}, rng, -3, 3, true);
  Tensor w = RandomTensor({6}, rng);
  Graph g;
  Tensor y = g.Sigmoid(x);
  g.Backward(WeightedSum(g, y, w));
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(x.grad()[i], y[i] * (1 - y[i]) * w[i], 1e-15);

  Tensor inputs[] = {x};
  auto report = Gradcheck(
      [&](Graph& g2) { return WeightedSum(g2, g2.Sigmoid(x), w); }, inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(ConcatTest, ValuesGradientsAndErrors) {
  Graph g;
  Tensor a = Tensor::FromData({1, 1}, {1}, true);
  Tensor b = Tensor::FromData({1, 2}, {2, 3}, true);
  Tensor c = g.ConcatFeatures(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
            (std::vector<double>{1, 2, 3}));
  g.Backward(g.SumAll(c));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[1], 1.0);

  Graph g2;
  EXPECT_THROW(g2.ConcatFeatures(Tensor::Zeros({2, 1}), Tensor::Zeros({3, 1})),
               DimensionError);

  Rng rng(4);
  Tensor x = RandomTensor({2, 3, 2}, rng);
  Tensor y = RandomTensor({2, 3, 5}, rng);
  Tensor w = RandomTensor({2, 3, 7}, rng);
  Tensor inputs[] = {x, y};
  auto report = Gradcheck(
      [&](Graph& g3) { return WeightedSum(g3, g3.ConcatFeatures(x, y), w); },
      inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(ReduceTest, ValuesGradientsAndErrors) {
  Graph g;
  EXPECT_EQ(g.Reduce(ReduceOp::kSum, Tensor::FromData({3}, {1, 2, 3}), 0).item(),
            6.0);
  Tensor m = g.Reduce(ReduceOp::kMean, Tensor::Full({3, 4}, 2.5), 1);
  EXPECT_EQ(m.shape(), (Shape{3}));
  for (double v : m.data()) EXPECT_EQ(v, 2.5);
  EXPECT_THROW(g.Reduce(ReduceOp::kSum, Tensor::Zeros({2, 2}), 2),
               DimensionError);

  Rng rng(6);
  Tensor x = RandomTensor({2, 3, 4}, rng);
  for (int axis : {0, 1, 2, -1}) {
    for (ReduceOp op : {ReduceOp::kSum, ReduceOp::kMean}) {
      Tensor probe;
      {
        Graph tmp(false);
        probe = RandomTensor(tmp.Reduce(op, x, axis).shape(), rng);
      }
      Tensor inputs[] = {x};
      auto report = Gradcheck(
          [&](Graph& g2) { return WeightedSum(g2, g2.Reduce(op, x, axis), probe); },
          inputs);
      EXPECT_LT(report.max_rel_error, 1e-6) << "axis " << axis;
    }
  }
}

TEST(LayerNormTest, Examples) {
  Graph g;
  Tensor gain = Tensor::FromData({3}, {2, -1, 0.5});
  Tensor bias = Tensor::FromData({3}, {0.1, 0.2, 0.3});
  Tensor y = g.LayerNorm(Tensor::Full({1, 3}, 7.0), gain, bias);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[j], bias[j]);

  // Mean 0, population variance 1: each entry divided by sqrt(1 + 1e-5).
  Tensor z = g.LayerNorm(Tensor::FromData({1, 2}, {1, -1}),
                         Tensor::Full({2}, 1.0), Tensor::Zeros({2}));
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(z[0], expected, 1e-15);
  EXPECT_NEAR(z[1], -expected, 1e-15);
}

TEST(LayerNormTest, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor x = RandomTensor({2, 3, 5}, rng);
  Tensor gain = RandomTensor({5}, rng, 0.5, 1.5);
  Tensor bias = RandomTensor({5}, rng);
  Tensor w = RandomTensor({2, 3, 5}, rng);
  Tensor inputs[] = {x, gain, bias};
  auto report = Gradcheck(
      [&](Graph& g) { return WeightedSum(g, g.LayerNorm(x, gain, bias), w); },
      inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(EmbeddingTest, LookupGradientAndRangeCheck) {
  Rng rng(13);
  Tensor table = RandomTensor({5, 3}, rng);
  std::vector<int> ids = {4, 0, 4, 2};
  Tensor w = RandomTensor({2, 2, 3}, rng);
  Graph g;
  Tensor e = g.Embedding(table, ids, {2, 2});
  EXPECT_EQ(e.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(e.at({1, 0, 1}), table.at({4, 1}));
  std::vector<int> bad = {5};
  EXPECT_THROW(g.Embedding(table, bad, {1}), DataError);

  Tensor inputs[] = {table};
  auto report = Gradcheck(
      [&](Graph& g2) { return WeightedSum(g2, g2.Embedding(table, ids, {2, 2}), w); },
      inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(DropoutTest, ZeroRateIsIdentityAndGradientFollowsMask) {
  Rng rng(1);
  Tensor x = RandomTensor({4, 8}, rng, -1, 1, true);
  Graph g;
  Rng drop(2);
  EXPECT_TRUE(g.Dropout(x, 0.0, drop).SameStorage(x));
  Tensor y = g.Dropout(x, 0.5, drop);
  g.Backward(g.SumAll(y));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0) {
      EXPECT_EQ(x.grad()[i], 0.0);
    } else {
      EXPECT_EQ(x.grad()[i], 2.0);
      EXPECT_DOUBLE_EQ(y[i], 2.0 * x[i]);
    }
  }
}

TEST(BackwardTest, ContractAndStateErrors) {
  Tensor x = Tensor::FromData({2}, {1, 2}, true);
  Graph g;
  Tensor y = g.Scale(x, 3.0);
  EXPECT_THROW(g.Backward(y), ContractError);
  Tensor loss = g.SumAll(y);
  g.Backward(loss);
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_THROW(g.Backward(loss), StateError);
  g.Reset();
  loss = g.SumAll(g.Scale(x, 3.0));
  g.Backward(loss);
  EXPECT_EQ(x.grad()[0], 6.0);

  Graph other;
  EXPECT_THROW(other.Backward(loss), ContractError);
}

TEST(BackwardTest, VisitsNodesInReverseOrder) {
  Tensor x = Tensor::FromData({1, 2}, {0.3, -0.2}, true);
  Graph g;
  Tensor loss = g.SumAll(g.Sigmoid(g.Scale(x, 2.0)));
  const auto trace = g.OpTrace();
  ASSERT_EQ(trace.size(), 4u);
  EXPECT_EQ(trace.front(), "affine");
  EXPECT_EQ(trace.back(), "sum");
  g.Backward(loss);
  EXPECT_TRUE(x.has_grad());
}

TEST(BackwardTest, GradientsAccumulateAcrossUses) {
  Rng rng(31);
  Tensor x = RandomTensor({3, 3}, rng, -1, 1, true);
  Tensor w = RandomTensor({3, 3}, rng);

  Graph both;
  both.Backward(both.Add(WeightedSum(both, both.Sigmoid(x), w),
                         WeightedSum(both, both.MatMul(x, x), w)));
  std::vector<double> combined(x.grad().begin(), x.grad().end());

  x.ClearGrad();
  Graph first;
  first.Backward(WeightedSum(first, first.Sigmoid(x), w));
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.ClearGrad();
  Graph second;
  second.Backward(WeightedSum(second, second.MatMul(x, x), w));
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(combined[i], g1[i] + x.grad()[i], 1e-14);
}

TEST(GradcheckTest, LinearFunctionIsExact) {
  Rng rng(41);
  Tensor x = RandomTensor({4, 3}, rng);
  Tensor w = RandomTensor({4, 3}, rng, 0.5, 2.0);
  Tensor inputs[] = {x};
  auto report = Gradcheck(
      [&](Graph& g) { return g.Affine(WeightedSum(g, x, w), 1.5, 2.0); },
      inputs);
  EXPECT_LT(report.max_rel_error, 1e-9);
  EXPECT_EQ(report.num_checked, 12u);
}

TEST(GradcheckTest, SoftmaxCrossEntropyComposite) {
  Rng rng(42);
  Tensor logits = RandomTensor({5, 4}, rng, -2, 2);
  std::vector<int> labels = {0, 3, 1, 1, 2};
  Tensor inputs[] = {logits};
  auto report = Gradcheck(
      [&](Graph& g) { return g.SoftmaxCrossEntropy(logits, labels); }, inputs);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradcheckTest, AnalyticBiasIsDetected) {
  Rng rng(43);
  Tensor x = RandomTensor({3}, rng);
  Tensor inputs[] = {x};
  GradcheckOptions opts;
  opts.analytic_bias = 1e-2;
  auto report = Gradcheck(
      [&](Graph& g) { return g.SumAll(g.Sigmoid(x)); }, inputs, opts);
  EXPECT_GT(report.max_rel_error, 1e-4);
}

// Random chains of ops on random shapes; every chain must stay finite and
// pass gradcheck.
TEST(GradcheckProperty, RandomCompositesOfOps) {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.UniformInt(6);
    const std::size_t k = 2 + rng.UniformInt(6);
    const std::size_t n = 2 + rng.UniformInt(6);
    Tensor a = RandomTensor({m, k}, rng);
    Tensor b = RandomTensor({k, n}, rng);
    Tensor c = RandomTensor({m, 1}, rng);
    Tensor gain = RandomTensor({n}, rng);
    Tensor bias = RandomTensor({n}, rng);
    Tensor w = RandomTensor({m, 2 * n}, rng);
    const int variant = static_cast<int>(rng.UniformInt(4));
    auto f = [&](Graph& g) {
      Tensor h = g.MatMul(a, b);
      switch (variant) {
        case 0: h = g.RowSoftmax(h); break;
        case 1: h = g.Sigmoid(g.Mul(h, c)); break;
        case 2: h = g.LayerNorm(g.Add(h, c), gain, bias); break;
        default: h = g.Tanh(g.Sub(h, c)); break;
      }
      Tensor cat = g.ConcatFeatures(h, g.Scale(h, -0.5));
      Tensor pooled = g.Reduce(ReduceOp::kMean, g.Mul(cat, w), 1);
      Tensor out = g.SumAll(pooled);
      EXPECT_TRUE(out.AllFinite());
      return out;
    };
    Tensor inputs[] = {a, b, c, gain, bias};
    auto report = Gradcheck(f, inputs);
    EXPECT_LT(report.max_rel_error, 1e-4)
        << "trial " << trial << " variant " << variant;
  }
}

}  // namespace
}  // namespace qvi
