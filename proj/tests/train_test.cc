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

#include "qvi/train.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "gtest/gtest.h"
#include "qvi/error.h"
#include "qvi/gradcheck.h"
#include "test_util.h"

namespace qvi {
namespace {

using testing::RandomTensor;

std::vector<NamedParam> OneParam(Tensor t) { return {{"x", t}}; }

void SetGrad(Tensor t, double g) {
  for (double& v : t.mutable_grad()) v = g;
}

// ---- cross_entropy --------------------------------------------------------

TEST(CrossEntropyTest, UniformLogits) {
  Graph g;
  Tensor logits = Tensor::Full({3, 4}, 0.7);
  std::vector<int> labels = {0, 3, 2};
  EXPECT_NEAR(CrossEntropy(g, logits, labels).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropyTest, SaturatedMarginGivesZeroLoss) {
  Graph g;
  Tensor logits = Tensor::FromData({2, 3}, {1000, 0, 0, 0, -5, 1000});
  std::vector<int> labels = {0, 2};
  EXPECT_LT(CrossEntropy(g, logits, labels).item(), 1e-300);
}

TEST(CrossEntropyTest, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  Tensor logits = RandomTensor({5, 3}, rng, -3, 3);
  std::vector<int> labels = {0, 2, 1, 1, 0};
  std::vector<Tensor> inputs = {logits};
  auto report = Gradcheck(
      [&](Graph& g) { return CrossEntropy(g, logits, labels); }, inputs);
  EXPECT_LT(report.max_rel_error, 1e-7);
}

// ---- optimizers -----------------------------------------------------------

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(2);
  Tensor x = RandomTensor({4}, rng);
  Tensor before = x.Clone();
  Optimizer opt(TrainConfig{});
  for (int t = 0; t < 5; ++t) {
    SetGrad(x, 0.0);
    opt.Step(OneParam(x));
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x[i], before[i]);
}

TEST(AdamTest, ConstantGradientClosedForm) {
  // With g fixed, bias correction gives m_hat = g and v_hat = g^2 exactly in
  // real arithmetic, so each step moves by lr * g / (|g| + eps).
  TrainConfig cfg;
  cfg.lr = 0.01;
  for (double g : {0.3, -2.5, 1e-3}) {
    Tensor x = Tensor::Scalar(1.0);
    Optimizer opt(cfg);
    for (int t = 1; t <= 50; ++t) {
      SetGrad(x, g);
      opt.Step(OneParam(x));
      const double expect = 1.0 - t * cfg.lr * g / (std::abs(g) + cfg.eps);
      ASSERT_NEAR(x.item(), expect, 1e-12) << "g=" << g << " t=" << t;
    }
  }
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  TrainConfig cfg;
  cfg.lr = 0.5;
  Tensor x = Tensor::FromData({2}, {0.0, 0.0});
  Optimizer opt(cfg);
  x.mutable_grad()[0] = 4.0;
  x.mutable_grad()[1] = -1e-2;
  opt.Step(OneParam(x));
  EXPECT_NEAR(x[0], -0.5, 1e-8);
  EXPECT_NEAR(x[1], 0.5, 1e-6);
}

TEST(AdamTest, IdenticalRunsAreIdentical) {
  auto run = []() {
    Rng rng(3);
    Tensor x = Tensor::FromData({3}, {0.1, 0.2, 0.3});
    Optimizer opt(TrainConfig{});
    for (int t = 0; t < 20; ++t) {
      auto g = x.mutable_grad();
      for (double& v : g) v = rng.Normal();
      opt.Step(OneParam(x));
    }
    return std::vector<double>(x.data().begin(), x.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamTest, StateSaveRestoreIsBitExact) {
  for (OptimizerKind kind : {OptimizerKind::kAdam, OptimizerKind::kSgd}) {
    TrainConfig cfg;
    cfg.optimizer = kind;
    Rng rng(4);
    Tensor a = RandomTensor({3, 2}, rng);
    Optimizer opt(cfg);
    std::vector<std::vector<double>> grads;
    for (int t = 0; t < 6; ++t) {
      std::vector<double> g(6);
      for (double& v : g) v = rng.Normal();
      grads.push_back(g);
    }
    for (int t = 0; t < 3; ++t) {
      std::copy(grads[t].begin(), grads[t].end(), a.mutable_grad().begin());
      opt.Step(OneParam(a));
    }
    std::stringstream saved;
    opt.Save(saved);
    Tensor b = a.Clone();
    Optimizer restored(cfg);
    restored.Load(saved);
    EXPECT_EQ(restored.step(), 3u);
    std::stringstream again;
    restored.Save(again);
    EXPECT_EQ(saved.str(), again.str());
    for (int t = 3; t < 6; ++t) {
      std::copy(grads[t].begin(), grads[t].end(), a.mutable_grad().begin());
      std::copy(grads[t].begin(), grads[t].end(), b.mutable_grad().begin());
      opt.Step(OneParam(a));
      restored.Step({{"x", b}});
    }
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a[i], b[i]);
  }
}

TEST(AdamTest, LoadRejectsMismatchedState) {
  Optimizer opt(TrainConfig{});
  Tensor x = Tensor::Zeros({2});
  SetGrad(x, 1.0);
  opt.Step(OneParam(x));
  std::stringstream ss;
  opt.Save(ss);
  TrainConfig sgd;
  sgd.optimizer = OptimizerKind::kSgd;
  Optimizer other(sgd);
  EXPECT_THROW(other.Load(ss), ParseError);
  std::stringstream junk("QVI-OPTIMIZER 1\nkind adam\nstep x\n");
  Optimizer fresh(TrainConfig{});
  EXPECT_THROW(fresh.Load(junk), ParseError);
}

TEST(SgdTest, PlainGradientStep) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr = 0.1;
  Tensor x = Tensor::FromData({2}, {1.0, -1.0});
  x.mutable_grad()[0] = 2.0;
  x.mutable_grad()[1] = -3.0;
  Optimizer(cfg).Step(OneParam(x));
  EXPECT_DOUBLE_EQ(x[0], 0.8);
  EXPECT_DOUBLE_EQ(x[1], -0.7);
}

TEST(ClipTest, RescalesOnlyAboveThreshold) {
  Tensor a = Tensor::Zeros({2}), b = Tensor::Zeros({1});
  a.mutable_grad()[0] = 3.0;
  b.mutable_grad()[0] = 4.0;
  std::vector<NamedParam> params = {{"a", a}, {"b", b}};
  EXPECT_DOUBLE_EQ(ClipGradNorm(params, 10.0), 5.0);
  EXPECT_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(ClipGradNorm(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

// ---- metrics --------------------------------------------------------------

TEST(MetricsTest, AllCorrect) {
  std::vector<int> y = {0, 1, 2, 1, 0};
  Metrics m = ComputeMetrics(y, y, 3);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
}

TEST(MetricsTest, ConstantPredictorOnBalancedBinary) {
  std::vector<int> y = {0, 1, 0, 1, 1, 0};
  std::vector<int> p(6, 0);
  Metrics m = ComputeMetrics(p, y, 2);
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_NEAR(m.macro_f1, 1.0 / 3.0, 1e-15);
}

TEST(MetricsTest, AbsentClassIsExcluded) {
  std::vector<int> y = {0, 1, 1, 0};
  Metrics m = ComputeMetrics(y, y, 5);
  EXPECT_EQ(m.macro_f1, 1.0);
}

TEST(MetricsTest, PermutationInvariant) {
  std::vector<int> y = {0, 1, 2, 2, 1, 0, 1};
  std::vector<int> p = {0, 2, 2, 1, 1, 0, 0};
  Metrics a = ComputeMetrics(p, y, 3);
  std::vector<int> yr(y.rbegin(), y.rend()), pr(p.rbegin(), p.rend());
  Metrics b = ComputeMetrics(pr, yr, 3);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.macro_f1, b.macro_f1);
}

ModelConfig SmallTokenModel(ValueFn fn = ValueFn::kQvi) {
  ModelConfig c;
  c.kind = ModelKind::kAdditivePool;
  c.vocab_size = 20;
  c.embed_dim = 8;
  c.num_classes = 4;
  c.dropout = 0.1;
  c.attention.value_fn = fn;
  return c;
}

TEST(EvaluateTest, InvariantToBatchSize) {
  Model m(SmallTokenModel(), 3);
  Dataset ds = GenTokenRetrieval(37, 5, 20, 1);
  Metrics a = Evaluate(m, ds, 1), b = Evaluate(m, ds, 8), c = Evaluate(m, ds, 100);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.accuracy, c.accuracy);
  EXPECT_EQ(a.macro_f1, c.macro_f1);
  EXPECT_NEAR(a.loss, c.loss, 1e-12);
}

// ---- fit ------------------------------------------------------------------

TrainConfig QuickTrain(std::size_t epochs) {
  TrainConfig t;
  t.lr = 1e-2;
  t.epochs = epochs;
  t.batch_size = 16;
  t.seed = 7;
  return t;
}

TEST(FitTest, LearnsTokenRetrieval) {
  Dataset train = GenTokenRetrieval(400, 6, 20, 1);
  Dataset val = GenTokenRetrieval(100, 6, 20, 2);
  Model m(SmallTokenModel(), 5);
  RunResult r = Fit(m, train, val, QuickTrain(8));
  ASSERT_EQ(r.epochs.size(), 8u);
  EXPECT_LT(r.epochs.back().loss, r.epochs.front().loss);
  EXPECT_GT(r.best_accuracy, 0.9);
  // The model holds the best parameters afterwards.
  EXPECT_EQ(Evaluate(m, val).accuracy, r.best_accuracy);
}

TEST(FitTest, Deterministic) {
  Dataset train = GenTokenRetrieval(200, 6, 20, 1);
  Dataset val = GenTokenRetrieval(50, 6, 20, 2);
  auto run = [&]() {
    Model m(SmallTokenModel(), 5);
    return Fit(m, train, val, QuickTrain(3));
  };
  RunResult a = run(), b = run();
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EXPECT_EQ(a.epochs[e].loss, b.epochs[e].loss);
    EXPECT_EQ(a.epochs[e].accuracy, b.epochs[e].accuracy);
  }
}

TEST(FitTest, EarlyStopAndEvalCadence) {
  Dataset train = GenTokenRetrieval(64, 4, 20, 1);
  Dataset val = GenTokenRetrieval(32, 4, 20, 2);
  TrainConfig t = QuickTrain(20);
  t.optimizer = OptimizerKind::kSgd;
  t.lr = 1e-300;  // parameters never move, so accuracy never improves
  t.early_stop_patience = 2;
  Model m(SmallTokenModel(), 5);
  RunResult r = Fit(m, train, val, t);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.epochs.size(), 3u);
  EXPECT_EQ(r.best_epoch, 1u);

  t.early_stop_patience = 0;
  t.epochs = 5;
  t.eval_every = 2;
  Model m2(SmallTokenModel(), 5);
  RunResult r2 = Fit(m2, train, val, t);
  ASSERT_EQ(r2.epochs.size(), 5u);
  EXPECT_FALSE(r2.epochs[0].evaluated);
  EXPECT_TRUE(r2.epochs[1].evaluated);
  EXPECT_FALSE(r2.epochs[2].evaluated);
  EXPECT_EQ(r2.epochs[2].accuracy, r2.epochs[1].accuracy);
  EXPECT_TRUE(r2.epochs[4].evaluated);
}

TEST(FitTest, NonFiniteLossNamesTheParameter) {
  Dataset train = GenTokenRetrieval(16, 4, 20, 1);
  Model m(SmallTokenModel(), 5);
  Tensor w = m.params().Find("classifier.weight");
  w[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    Fit(m, train, train, QuickTrain(1));
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("classifier.weight"), std::string::npos)
        << e.what();
  }
}

TEST(FitTest, ClippingIsCountedAndLogged) {
  Dataset train = GenTokenRetrieval(32, 4, 20, 1);
  TrainConfig t = QuickTrain(1);
  t.clip_norm = 1e-6;
  Model m(SmallTokenModel(), 5);
  std::vector<std::string> lines;
  RunResult r = Fit(m, train, train, t, [&](const std::string& s) { lines.push_back(s); });
  EXPECT_EQ(r.clip_events, 2u);
  EXPECT_EQ(lines[0].rfind("clip:", 0), 0u);
}

// ---- run_ablation ---------------------------------------------------------

AblationSpec SmallSpec() {
  AblationSpec s;
  s.model = SmallTokenModel();
  s.train = QuickTrain(2);
  return s;
}

TEST(AblationTest, SingleVariantSingleRow) {
  AblationSpec s = SmallSpec();
  s.variants = {ValueFn::kStandard};
  s.seeds = {1};
  Dataset train = GenTokenRetrieval(64, 4, 20, 1), val = GenTokenRetrieval(32, 4, 20, 2);
  AblationResult r = RunAblation(s, train, val);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].variant, ValueFn::kStandard);
  EXPECT_EQ(r.rows[0].accuracy_std, 0.0);
}

TEST(AblationTest, RepeatedSeedHasZeroSpreadAndThreadsDoNotMatter) {
  AblationSpec s = SmallSpec();
  s.variants = {ValueFn::kQvi, ValueFn::kValuesOnly};
  s.seeds = {3, 3};
  Dataset train = GenTokenRetrieval(64, 4, 20, 1), val = GenTokenRetrieval(32, 4, 20, 2);
  AblationResult one = RunAblation(s, train, val);
  for (const AblationRow& row : one.rows) {
    EXPECT_EQ(row.runs, 2u);
    EXPECT_EQ(row.accuracy_std, 0.0);
    EXPECT_EQ(row.macro_f1_std, 0.0);
  }
  s.threads = 3;
  AblationResult many = RunAblation(s, train, val);
  std::ostringstream a, b;
  WriteMetricsTable(a, one.runs);
  WriteMetricsTable(b, many.runs);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')),
            "variant\tseed\tepoch\tloss\tacc\tmacro_f1");
}

TEST(AblationTest, VariantsShareNonQviInitialization) {
  ModelConfig a = SmallTokenModel(ValueFn::kValuesOnly);
  ModelConfig b = SmallTokenModel(ValueFn::kQvi);
  Model ma(a, 9), mb(b, 9);
  for (const NamedParam& p : ma.params().params()) {
    ASSERT_TRUE(mb.params().Contains(p.name)) << p.name;
    Tensor q = mb.params().Find(p.name);
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(q[i], p.tensor[i]);
  }
}

}  // namespace
}  // namespace qvi
