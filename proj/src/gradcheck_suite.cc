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

#include "qvi/gradcheck_suite.h"

#include <algorithm>
#include <functional>

#include "qvi/attention.h"
#include "qvi/data.h"
#include "qvi/error.h"
#include "qvi/graph.h"
#include "qvi/model.h"
#include "qvi/params.h"
#include "qvi/rng.h"

namespace qvi {
namespace {

constexpr ValueFn kValueFns[] = {ValueFn::kStandard, ValueFn::kQvi,
                                 ValueFn::kValuesOnly,
                                 ValueFn::kInteractionsOnly,
                                 ValueFn::kSimpleSum};

Tensor Rand(const Shape& shape, Rng& rng) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> data(n);
  for (double& v : data) v = rng.Uniform(-1.0, 1.0);
  return Tensor::FromData(shape, std::move(data));
}

// Entries with magnitude in [0.1, 1], so a kink at zero stays out of reach
// of the finite-difference step.
Tensor RandAwayFromZero(const Shape& shape, Rng& rng) {
  Tensor t = Rand(shape, rng);
  for (double& v : t.data()) v = (v < 0 ? -0.1 : 0.1) + 0.9 * v;
  return t;
}

Tensor Probe(Graph& g, const Tensor& x, const Tensor& w) {
  return g.SumAll(g.Mul(x, w));
}

Mask RaggedMask(std::size_t rows, std::size_t cols) {
  Mask m = Mask::AllTrue({rows, cols});
  for (std::size_t r = 1; r < rows; ++r) {
    const std::size_t keep = std::max<std::size_t>(1, cols - r);
    for (std::size_t c = keep; c < cols; ++c) m.keep[r * cols + c] = 0;
  }
  return m;
}

class Suite {
 public:
  Suite(std::uint64_t seed, const GradcheckOptions& options, double tolerance)
      : seed_(seed), options_(options), tolerance_(tolerance) {}

  // `build` fills `inputs` and returns the loss function over them.
  void Add(const std::string& name,
           const std::function<LossFn(Rng&, std::vector<Tensor>&)>& build) {
    Rng rng = Rng::Derive(seed_, name);
    std::vector<Tensor> inputs;
    LossFn f = build(rng, inputs);
    GradcheckCase c;
    c.name = name;
    c.report = Gradcheck(f, inputs, options_);
    c.passed = c.report.max_rel_error < tolerance_;
    result_.cases.push_back(std::move(c));
  }

  GradcheckSuiteResult Take() { return std::move(result_); }

 private:
  std::uint64_t seed_;
  GradcheckOptions options_;
  double tolerance_;
  GradcheckSuiteResult result_;
};

void UnaryCase(Suite& s, const std::string& name, Shape shape,
               Tensor (Graph::*op)(const Tensor&), bool avoid_zero = false) {
  s.Add(name, [=](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor x = avoid_zero ? RandAwayFromZero(shape, rng) : Rand(shape, rng);
    Tensor w = Rand(shape, rng);
    in = {x};
    return [=](Graph& g) { return Probe(g, (g.*op)(x), w); };
  });
}

void OpsCases(Suite& s) {
  s.Add("ops/matmul", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor a = Rand({3, 4}, rng), b = Rand({4, 2}, rng), w = Rand({3, 2}, rng);
    in = {a, b};
    return [=](Graph& g) { return Probe(g, g.MatMul(a, b), w); };
  });
  s.Add("ops/matmul_batched", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor a = Rand({2, 3, 4}, rng), b = Rand({2, 4, 2}, rng);
    Tensor shared = Rand({2, 5}, rng), w = Rand({2, 3, 5}, rng);
    in = {a, b, shared};
    return [=](Graph& g) { return Probe(g, g.MatMul(g.MatMul(a, b), shared), w); };
  });
  s.Add("ops/transpose_reshape", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor x = Rand({2, 3, 4}, rng), w = Rand({8, 3}, rng);
    in = {x};
    return [=](Graph& g) { return Probe(g, g.Reshape(g.Transpose(x), {8, 3}), w); };
  });
  s.Add("ops/broadcast_binary", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor a = Rand({2, 3}, rng), col = Rand({2, 1}, rng), row = Rand({3}, rng);
    Tensor w = Rand({2, 3}, rng);
    in = {a, col, row};
    return [=](Graph& g) {
      return Probe(g, g.Sub(g.Mul(g.Add(a, col), row), col), w);
    };
  });
  s.Add("ops/scale_affine", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor x = Rand({5}, rng), w = Rand({5}, rng);
    in = {x};
    return [=](Graph& g) { return Probe(g, g.Affine(g.Scale(x, -1.5), 0.5, 2.0), w); };
  });
  UnaryCase(s, "ops/sigmoid", {2, 4}, &Graph::Sigmoid);
  UnaryCase(s, "ops/tanh", {2, 4}, &Graph::Tanh);
  UnaryCase(s, "ops/relu", {2, 4}, &Graph::Relu, true);
  s.Add("ops/row_softmax_masked", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor x = Rand({3, 4}, rng), w = Rand({3, 4}, rng);
    in = {x};
    return [=](Graph& g) {
      Mask m = RaggedMask(3, 4);
      return Probe(g, g.RowSoftmax(x, &m), w);
    };
  });
  s.Add("ops/concat", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor a = Rand({2, 3}, rng), b = Rand({2, 2}, rng), w = Rand({2, 5}, rng);
    in = {a, b};
    return [=](Graph& g) { return Probe(g, g.ConcatFeatures(a, b), w); };
  });
  s.Add("ops/reduce", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor x = Rand({2, 3, 4}, rng), w1 = Rand({2, 4}, rng), w2 = Rand({2, 3}, rng);
    in = {x};
    return [=](Graph& g) {
      return g.Add(Probe(g, g.Reduce(ReduceOp::kSum, x, 1), w1),
                   Probe(g, g.Reduce(ReduceOp::kMean, x, -1), w2));
    };
  });
  s.Add("ops/layer_norm", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor x = Rand({3, 5}, rng), gain = Rand({5}, rng), bias = Rand({5}, rng);
    Tensor w = Rand({3, 5}, rng);
    in = {x, gain, bias};
    return [=](Graph& g) { return Probe(g, g.LayerNorm(x, gain, bias), w); };
  });
  s.Add("ops/embedding", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor table = Rand({5, 3}, rng), w = Rand({2, 3, 3}, rng);
    in = {table};
    return [=](Graph& g) {
      const std::vector<int> ids = {1, 4, 1, 0, 2, 4};
      return Probe(g, g.Embedding(table, ids, {2, 3}), w);
    };
  });
  s.Add("ops/softmax_cross_entropy", [](Rng& rng, std::vector<Tensor>& in) -> LossFn {
    Tensor x = Rand({4, 3}, rng), W = Rand({3, 3}, rng);
    in = {x, W};
    return [=](Graph& g) {
      const std::vector<int> labels = {0, 2, 1, 2};
      return g.SoftmaxCrossEntropy(g.MatMul(g.Tanh(x), W), labels);
    };
  });
}

AdditiveParams RandomAdditive(std::size_t d, Rng& rng) {
  AdditiveParams p;
  p.query = Rand({d}, rng);
  p.mlp = MlpScoreParams{Rand({d, d}, rng), Rand({d, d}, rng), Rand({d}, rng),
                         Rand({d}, rng)};
  p.W = Rand({d, d}, rng);
  p.u = Rand({2 * d}, rng);
  return p;
}

HeadParams RandomHead(std::size_t d_model, std::size_t d, Rng& rng) {
  return {Rand({d_model, d}, rng), Rand({d_model, d}, rng),
          Rand({d_model, d}, rng), Rand({d, d}, rng), Rand({2 * d}, rng)};
}

void AttentionCases(Suite& s) {
  constexpr std::size_t kB = 2, kN = 3, kD = 4, kNq = 2;
  for (ValueFn fn : kValueFns) {
    for (ScoreFn score : {ScoreFn::kDot, ScoreFn::kMlp}) {
      const std::string name = "attention/additive/" + std::string(ToString(fn)) +
                               "/" + std::string(ToString(score));
      s.Add(name, [=](Rng& rng, std::vector<Tensor>& in) -> LossFn {
        AdditiveParams p = RandomAdditive(kD, rng);
        Tensor q = Rand({kB, kD}, rng), V = Rand({kB, kN, kD}, rng);
        Tensor w = Rand({kB, kD}, rng);
        in = {q, V};
        if (score == ScoreFn::kMlp) {
          in.insert(in.end(), {p.mlp->query_proj, p.mlp->value_proj,
                               p.mlp->bias, p.mlp->out});
        }
        if (UsesInteraction(fn)) in.push_back(p.W);
        if (UsesGate(fn)) in.push_back(p.u);
        AttentionConfig c;
        c.form = AttentionForm::kAdditive;
        c.value_fn = fn;
        c.score_fn = score;
        c.dim = kD;
        return [=](Graph& g) {
          Mask m = RaggedMask(kB, kN);
          return Probe(g, AdditiveAttention(g, &q, V, &m, c, p), w);
        };
      });
    }
  }
  for (ValueFn fn : kValueFns) {
    for (GateMode mode : {GateMode::kPerPosition, GateMode::kScalar}) {
      if (!UsesGate(fn) && mode == GateMode::kScalar) continue;
      std::string name = "attention/dot/" + std::string(ToString(fn));
      if (UsesGate(fn)) name += "/" + std::string(ToString(mode));
      s.Add(name, [=](Rng& rng, std::vector<Tensor>& in) -> LossFn {
        HeadParams h = RandomHead(kD, kD, rng);
        Tensor Q = Rand({kB, kNq, kD}, rng), K = Rand({kB, kN, kD}, rng);
        Tensor V = Rand({kB, kN, kD}, rng), w = Rand({kB, kNq, kD}, rng);
        in = {Q, K, V};
        if (UsesInteraction(fn)) in.push_back(h.W);
        if (UsesGate(fn)) in.push_back(h.h_gate);
        AttentionConfig c;
        c.form = AttentionForm::kDotProduct;
        c.value_fn = fn;
        c.gate_mode = mode;
        c.dim = kD;
        return [=](Graph& g) {
          Mask qm = RaggedMask(kB, kNq), km = RaggedMask(kB, kN);
          return Probe(g, QviDotAttention(g, Q, K, V, &qm, &km, c, h), w);
        };
      });
    }
  }
  const std::pair<ValueFn, GateMode> kMhsa[] = {
      {ValueFn::kStandard, GateMode::kPerPosition},
      {ValueFn::kQvi, GateMode::kPerPosition},
      {ValueFn::kQvi, GateMode::kScalar}};
  for (auto [fn, mode] : kMhsa) {
    std::string name = "attention/multi_head/" + std::string(ToString(fn));
    if (UsesGate(fn)) name += "/" + std::string(ToString(mode));
    s.Add(name, [=](Rng& rng, std::vector<Tensor>& in) -> LossFn {
      AttentionConfig c;
      c.form = AttentionForm::kDotProduct;
      c.value_fn = fn;
      c.gate_mode = mode;
      c.dim = 2;
      c.heads = 2;
      auto store = std::make_shared<ParamStore>(rng.NextU64());
      MultiHeadParams p = CreateMultiHeadParams(*store, "mhsa", c, 4);
      for (const NamedParam& np : store->params()) {
        Tensor t = np.tensor;
        for (double& v : t.data()) v += rng.Uniform(-0.5, 0.5);
      }
      Tensor X = Rand({kB, kN, 4}, rng), w = Rand({kB, kN, 4}, rng);
      in = {X};
      for (const NamedParam& np : store->params()) in.push_back(np.tensor);
      return [=](Graph& g) {
        Mask m = RaggedMask(kB, kN);
        return Probe(g, MultiHeadSelfAttention(g, X, &m, c, p), w);
      };
    });
  }
}

// Model parameters get uniform jitter so that zero-initialized biases and
// gates do not hide wrong gradients. The jitter is redrawn while any relu
// input sits within kKinkMargin of zero.
constexpr double kKinkMargin = 1e-3;

LossFn ModelLoss(const ModelConfig& config, Dataset ds, Rng& rng,
                 std::vector<Tensor>& in) {
  auto model = std::make_shared<Model>(config, rng.NextU64());
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto batch = std::make_shared<Batch>(MakeBatch(ds, idx));
  std::vector<Tensor> initial;
  for (const NamedParam& p : model->params().params()) initial.push_back(p.tensor.Clone());
  for (int attempt = 0;; ++attempt) {
    const auto& params = model->params().params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].tensor;
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = initial[i][k] + rng.Uniform(-0.5, 0.5);
    }
    Graph probe;
    model->Forward(probe, *batch);
    if (probe.MinReluInputMagnitude() >= kKinkMargin) break;
    if (attempt == 100) throw StateError("could not place relu inputs away from zero");
  }
  for (const NamedParam& p : model->params().params()) in.push_back(p.tensor);
  return [model, batch](Graph& g) {
    return g.SoftmaxCrossEntropy(model->Forward(g, *batch), batch->labels);
  };
}

Dataset RaggedTokens(std::size_t n, std::size_t max_len, std::size_t vocab,
                     std::size_t classes, Rng& rng) {
  Dataset ds;
  ds.kind = DatasetKind::kTokens;
  ds.num_classes = classes;
  ds.length = max_len;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.label = static_cast<int>(i % classes);
    const std::size_t len = max_len - (i % 2);
    for (std::size_t t = 0; t < len; ++t) {
      e.tokens.push_back(1 + static_cast<int>(rng.UniformInt(vocab - 1)));
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

void ModelCases(Suite& s) {
  for (ValueFn fn : kValueFns) {
    s.Add("models/additive_pool/" + std::string(ToString(fn)) + "/tokens",
          [=](Rng& rng, std::vector<Tensor>& in) -> LossFn {
            ModelConfig c;
            c.kind = ModelKind::kAdditivePool;
            c.vocab_size = 5;
            c.embed_dim = 4;
            c.num_classes = 2;
            c.dropout = 0.0;
            c.attention.value_fn = fn;
            return ModelLoss(c, RaggedTokens(3, 3, 5, 2, rng), rng, in);
          });
    s.Add("models/additive_pool/" + std::string(ToString(fn)) + "/vectors",
          [=](Rng& rng, std::vector<Tensor>& in) -> LossFn {
            ModelConfig c;
            c.kind = ModelKind::kAdditivePool;
            c.input = InputMode::kVectors;
            c.embed_dim = 4;
            c.num_classes = 2;
            c.dropout = 0.0;
            c.attention.value_fn = fn;
            c.attention.score_fn = ScoreFn::kMlp;
            return ModelLoss(c, GenGatedRetrieval(3, 3, 4, rng.NextU64()), rng, in);
          });
  }
  for (ValueFn fn : kValueFns) {
    for (GateMode mode : {GateMode::kPerPosition, GateMode::kScalar}) {
      if (!UsesGate(fn) && mode == GateMode::kScalar) continue;
      std::string name = "models/transformer/" + std::string(ToString(fn));
      if (UsesGate(fn)) name += "/" + std::string(ToString(mode));
      s.Add(name, [=](Rng& rng, std::vector<Tensor>& in) -> LossFn {
        ModelConfig c;
        c.kind = ModelKind::kTransformer;
        c.vocab_size = 5;
        c.embed_dim = 8;
        c.heads = 2;
        c.head_dim = 4;
        c.ffn_dim = 6;
        c.layers = 1;
        c.max_len = 4;
        c.num_classes = 2;
        c.dropout = 0.0;
        c.attention.value_fn = fn;
        c.attention.gate_mode = mode;
        return ModelLoss(c, RaggedTokens(2, 4, 5, 2, rng), rng, in);
      });
    }
  }
}

}  // namespace

std::string_view ToString(GradcheckScope v) {
  switch (v) {
    case GradcheckScope::kOps:
      return "ops";
    case GradcheckScope::kAttention:
      return "attention";
    case GradcheckScope::kModels:
      return "models";
    case GradcheckScope::kAll:
      return "all";
  }
  return "?";
}

GradcheckScope ParseGradcheckScope(std::string_view s) {
  for (GradcheckScope v : {GradcheckScope::kOps, GradcheckScope::kAttention,
                           GradcheckScope::kModels, GradcheckScope::kAll}) {
    if (ToString(v) == s) return v;
  }
  throw ContractError("unknown gradcheck scope '" + std::string(s) +
                      "' (ops, attention, models, all)");
}

bool GradcheckSuiteResult::passed() const {
  return std::all_of(cases.begin(), cases.end(),
                     [](const GradcheckCase& c) { return c.passed; });
}

double GradcheckSuiteResult::max_rel_error() const {
  double m = 0.0;
  for (const GradcheckCase& c : cases) m = std::max(m, c.report.max_rel_error);
  return m;
}

GradcheckSuiteResult RunGradcheckSuite(GradcheckScope scope, std::uint64_t seed,
                                       const GradcheckOptions& options,
                                       double tolerance) {
  Suite s(seed, options, tolerance);
  const bool all = scope == GradcheckScope::kAll;
  if (all || scope == GradcheckScope::kOps) OpsCases(s);
  if (all || scope == GradcheckScope::kAttention) AttentionCases(s);
  if (all || scope == GradcheckScope::kModels) ModelCases(s);
  return s.Take();
}

}  // namespace qvi
