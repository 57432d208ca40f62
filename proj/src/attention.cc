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

#include "qvi/attention.h"

#include <cmath>

#include "qvi/error.h"

namespace qvi {
namespace {

template <typename E, std::size_t N>
E ParseEnum(std::string_view s, const char* what,
            const std::pair<std::string_view, E> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  std::string options;
  for (const auto& [name, value] : table) {
    if (!options.empty()) options += ", ";
    options += name;
  }
  throw ContractError("unknown " + std::string(what) + " '" + std::string(s) +
                      "' (expected one of: " + options + ")");
}

constexpr std::pair<std::string_view, AttentionForm> kForms[] = {
    {"additive", AttentionForm::kAdditive},
    {"dot_product", AttentionForm::kDotProduct}};
constexpr std::pair<std::string_view, ValueFn> kValueFns[] = {
    {"standard", ValueFn::kStandard},
    {"qvi", ValueFn::kQvi},
    {"values_only", ValueFn::kValuesOnly},
    {"interactions_only", ValueFn::kInteractionsOnly},
    {"simple_sum", ValueFn::kSimpleSum}};
constexpr std::pair<std::string_view, GateMode> kGateModes[] = {
    {"per_position", GateMode::kPerPosition}, {"scalar", GateMode::kScalar}};
constexpr std::pair<std::string_view, ScoreFn> kScoreFns[] = {
    {"dot", ScoreFn::kDot}, {"mlp", ScoreFn::kMlp}};

template <typename E, std::size_t N>
std::string_view EnumName(E v, const std::pair<std::string_view, E> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

void Require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

std::string Dims(const Tensor& t) { return ShapeString(t.shape()); }

// Rank-2 inputs are a batch of one.
Tensor Promote(Graph& g, const Tensor& x) {
  if (x.rank() != 2) return x;
  return g.Reshape(x, {1, x.dim(0), x.dim(1)});
}

std::optional<Mask> PromoteMask(const Mask* mask, bool single) {
  if (!mask) return std::nullopt;
  Mask m = *mask;
  if (single && m.shape.size() == 1) m.shape = {1, m.shape[0]};
  return m;
}

const Mask* Ptr(const std::optional<Mask>& m) { return m ? &*m : nullptr; }

void CheckMask(const Mask* mask, std::size_t batch, std::size_t len,
               const char* what) {
  if (mask && mask->shape != Shape{batch, len}) {
    throw DimensionError(std::string(what) + " mask has shape " +
                         ShapeString(mask->shape) + ", expected " +
                         ShapeString({batch, len}));
  }
}

Tensor Demote(Graph& g, const Tensor& x, bool single) {
  if (!single) return x;
  Shape s(x.shape().begin() + 1, x.shape().end());
  return g.Reshape(x, s);
}

// The query broadcast against rows of [B, N, d].
Tensor QueryRows(Graph& g, const Tensor& query, std::size_t batch,
                 std::size_t d) {
  if (query.rank() == 1) {
    Require(query.dim(0) == d, "query " + Dims(query) +
                                   " does not match value dimension " +
                                   std::to_string(d));
    return query;
  }
  Require(query.rank() == 2 && query.dim(0) == batch && query.dim(1) == d,
          "query " + Dims(query) + " does not match values of batch " +
              std::to_string(batch) + " and dimension " + std::to_string(d));
  return g.Reshape(query, {batch, 1, d});
}

// (1 - gate) * interaction + gate * values. A gate of exactly 1 (0) yields
// exactly the values (interaction).
Tensor GateMix(Graph& g, const Tensor& interaction, const Tensor& values,
               const Tensor& gate) {
  return g.Add(g.Mul(interaction, g.Affine(gate, -1.0, 1.0)),
               g.Mul(values, gate));
}

void CheckOverride(std::optional<double> v) {
  if (v && !(*v >= 0.0 && *v <= 1.0)) {
    throw ContractError("gate_override must lie in [0, 1]");
  }
}

}  // namespace

std::string_view ToString(AttentionForm v) { return EnumName(v, kForms); }
std::string_view ToString(ValueFn v) { return EnumName(v, kValueFns); }
std::string_view ToString(GateMode v) { return EnumName(v, kGateModes); }
std::string_view ToString(ScoreFn v) { return EnumName(v, kScoreFns); }

AttentionForm ParseAttentionForm(std::string_view s) {
  return ParseEnum(s, "attention form", kForms);
}
ValueFn ParseValueFn(std::string_view s) {
  return ParseEnum(s, "value function", kValueFns);
}
GateMode ParseGateMode(std::string_view s) {
  return ParseEnum(s, "gate mode", kGateModes);
}
ScoreFn ParseScoreFn(std::string_view s) {
  return ParseEnum(s, "score function", kScoreFns);
}

bool UsesInteraction(ValueFn v) {
  return v == ValueFn::kQvi || v == ValueFn::kInteractionsOnly ||
         v == ValueFn::kSimpleSum;
}

bool UsesGate(ValueFn v) { return v == ValueFn::kQvi; }

void AttentionConfig::Validate() const {
  if (dim == 0) throw ContractError("attention dim must be positive");
  if (heads == 0) throw ContractError("attention heads must be positive");
  CheckOverride(gate_override);
}

AdditiveParams CreateAdditiveParams(ParamStore& store,
                                    const std::string& prefix,
                                    const AttentionConfig& config,
                                    bool parameter_query) {
  config.Validate();
  const std::size_t d = config.dim;
  AdditiveParams p;
  if (parameter_query) {
    p.query = store.Create(prefix + ".query", {d}, Init::Normal(0.1));
  }
  if (config.score_fn == ScoreFn::kMlp) {
    MlpScoreParams mlp;
    mlp.query_proj = store.Create(prefix + ".score.query_proj", {d, d},
                                  Init::Xavier());
    mlp.value_proj = store.Create(prefix + ".score.value_proj", {d, d},
                                  Init::Xavier());
    mlp.bias = store.Create(prefix + ".score.bias", {d}, Init::Zeros());
    mlp.out = store.Create(prefix + ".score.out", {d}, Init::Zeros());
    p.mlp = mlp;
  }
  if (UsesInteraction(config.value_fn)) {
    p.W = store.Create(prefix + ".W", {d, d}, Init::IdentityPlusNoise(0.01));
  }
  if (UsesGate(config.value_fn)) {
    p.u = store.Create(prefix + ".u", {2 * d}, Init::Zeros());
  }
  return p;
}

MultiHeadParams CreateMultiHeadParams(ParamStore& store,
                                      const std::string& prefix,
                                      const AttentionConfig& config,
                                      std::size_t d_model) {
  config.Validate();
  const std::size_t dh = config.dim;
  MultiHeadParams p;
  for (std::size_t h = 0; h < config.heads; ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    HeadParams head;
    head.query_proj = store.Create(hp + ".query_proj", {d_model, dh},
                                   Init::Xavier());
    head.key_proj = store.Create(hp + ".key_proj", {d_model, dh},
                                 Init::Xavier());
    head.value_proj = store.Create(hp + ".value_proj", {d_model, dh},
                                   Init::Xavier());
    if (UsesInteraction(config.value_fn)) {
      head.W = store.Create(hp + ".W", {dh, dh}, Init::IdentityPlusNoise(0.01));
    }
    if (UsesGate(config.value_fn)) {
      head.h_gate = store.Create(hp + ".h_gate", {2 * dh}, Init::Zeros());
    }
    p.heads.push_back(head);
  }
  p.out_proj = store.Create(prefix + ".out_proj", {config.heads * dh, d_model},
                            Init::Xavier());
  return p;
}

Mask ExpandKeyMask(const Mask& key_mask, std::size_t rows) {
  if (key_mask.shape.size() != 2) {
    throw DimensionError("key mask must be [B, N], got " +
                         ShapeString(key_mask.shape));
  }
  const std::size_t batch = key_mask.shape[0];
  const std::size_t len = key_mask.shape[1];
  Mask out;
  out.shape = {batch, rows, len};
  out.keep.resize(batch * rows * len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j)
        out.keep[(b * rows + r) * len + j] = key_mask.keep[b * len + j];
  return out;
}

// ---- Additive -------------------------------------------------------------

Tensor AdditiveScores(Graph& g, const Tensor& query, const Tensor& values,
                      const Mask* mask, const AdditiveParams& params,
                      ScoreFn score_fn) {
  const bool single = values.rank() == 2;
  Require(values.rank() == 2 || values.rank() == 3,
          "values must be [N, d] or [B, N, d], got " + Dims(values));
  const Tensor v = Promote(g, values);
  const std::size_t batch = v.dim(0), n = v.dim(1), d = v.dim(2);
  const auto m = PromoteMask(mask, single);
  CheckMask(Ptr(m), batch, n, "attention");
  if (single) {
    Require(query.rank() == 1, "single-sequence attention needs a [d] query, got " +
                                   Dims(query));
  }
  const Tensor q = QueryRows(g, query, batch, d);

  Tensor scores;
  if (score_fn == ScoreFn::kDot) {
    Tensor col = q.rank() == 1 ? g.Reshape(q, {d, 1}) : g.Reshape(q, {batch, d, 1});
    scores = g.MatMul(v, col);
  } else {
    if (!params.mlp) throw ContractError("mlp score selected without mlp params");
    const MlpScoreParams& mlp = *params.mlp;
    Require(mlp.value_proj.shape() == Shape{d, d},
            "mlp value projection " + Dims(mlp.value_proj) +
                " does not match dimension " + std::to_string(d));
    Tensor qp = q.rank() == 1 ? g.MatMul(g.Reshape(q, {1, d}), mlp.query_proj)
                              : g.MatMul(g.Reshape(q, {batch, d}), mlp.query_proj);
    if (q.rank() != 1) qp = g.Reshape(qp, {batch, 1, d});
    Tensor hidden = g.Tanh(g.Add(g.Add(g.MatMul(v, mlp.value_proj), qp), mlp.bias));
    scores = g.MatMul(hidden, g.Reshape(mlp.out, {d, 1}));
  }
  Tensor alpha = g.RowSoftmax(g.Reshape(scores, {batch, n}), Ptr(m));
  return single ? g.Reshape(alpha, {n}) : alpha;
}

Tensor AdditivePool(Graph& g, const Tensor& alpha, const Tensor& values) {
  if (values.rank() == 2) {
    Require(alpha.rank() == 1 && alpha.dim(0) == values.dim(0),
            "pool weights " + Dims(alpha) + " do not match values " +
                Dims(values));
    Tensor o = g.MatMul(g.Reshape(alpha, {1, alpha.dim(0)}), values);
    return g.Reshape(o, {values.dim(1)});
  }
  Require(values.rank() == 3 && alpha.rank() == 2 &&
              alpha.dim(0) == values.dim(0) && alpha.dim(1) == values.dim(1),
          "pool weights " + Dims(alpha) + " do not match values " +
              Dims(values));
  const std::size_t batch = values.dim(0);
  Tensor o = g.MatMul(g.Reshape(alpha, {batch, 1, alpha.dim(1)}), values);
  return g.Reshape(o, {batch, values.dim(2)});
}

Tensor AdditiveInteraction(Graph& g, const Tensor& query, const Tensor& values,
                           const Tensor& W) {
  Require(values.rank() == 2 || values.rank() == 3,
          "values must be [N, d] or [B, N, d], got " + Dims(values));
  const std::size_t d = values.dim(-1);
  if (!W.defined()) throw ContractError("interaction map W is not defined");
  Require(W.shape() == Shape{d, d},
          "interaction map W must be [" + std::to_string(d) + "x" +
              std::to_string(d) + "], got " + Dims(W));
  const std::size_t batch = values.rank() == 3 ? values.dim(0) : 1;
  if (values.rank() == 2) {
    Require(query.rank() == 1, "single-sequence attention needs a [d] query, got " +
                                   Dims(query));
  }
  Tensor q = QueryRows(g, query, batch, d);
  return g.Mul(g.MatMul(values, g.Transpose(W)), q);
}

GatedValues QviGateAdditive(Graph& g, const Tensor& query,
                            const Tensor& values, const AdditiveParams& params,
                            std::optional<double> gate_override) {
  CheckOverride(gate_override);
  Tensor inter = AdditiveInteraction(g, query, values, params.W);
  Shape gate_shape = values.shape();
  gate_shape.back() = 1;
  Tensor gate;
  if (gate_override) {
    gate = Tensor::Full(gate_shape, *gate_override);
  } else {
    const std::size_t d = values.dim(-1);
    if (!params.u.defined()) throw ContractError("gate vector u is not defined");
    Require(params.u.shape() == Shape{2 * d},
            "gate vector u must have length " + std::to_string(2 * d) +
                ", got " + Dims(params.u));
    gate = g.Sigmoid(g.MatMul(g.ConcatFeatures(inter, values),
                              g.Reshape(params.u, {2 * d, 1})));
  }
  return {GateMix(g, inter, values, gate), gate};
}

Tensor AdditiveValueFunction(Graph& g, const Tensor& query,
                             const Tensor& values,
                             const AttentionConfig& config,
                             const AdditiveParams& params) {
  switch (config.value_fn) {
    case ValueFn::kStandard:
    case ValueFn::kValuesOnly:
      return values;
    case ValueFn::kInteractionsOnly:
      return AdditiveInteraction(g, query, values, params.W);
    case ValueFn::kSimpleSum:
      return g.Add(AdditiveInteraction(g, query, values, params.W), values);
    case ValueFn::kQvi:
      return QviGateAdditive(g, query, values, params, config.gate_override)
          .values;
  }
  throw ContractError("unhandled value function");
}

Tensor AdditiveAttention(Graph& g, const Tensor* query, const Tensor& values,
                         const Mask* mask, const AttentionConfig& config,
                         const AdditiveParams& params) {
  const Tensor& q = query ? *query : params.query;
  if (!q.defined()) {
    throw ContractError("additive attention needs a query: none passed and "
                        "no parameter query registered");
  }
  if (config.dim != 0) {
    Require(values.dim(-1) == config.dim,
            "values " + Dims(values) + " do not match attention dim " +
                std::to_string(config.dim));
  }
  Tensor alpha = AdditiveScores(g, q, values, mask, params, config.score_fn);
  Tensor G = AdditiveValueFunction(g, q, values, config, params);
  return AdditivePool(g, alpha, G);
}

// ---- Dot-product ----------------------------------------------------------

Tensor DotAttentionWeights(Graph& g, const Tensor& queries, const Tensor& keys,
                           const Mask* key_mask) {
  Require(queries.rank() == keys.rank() &&
              (queries.rank() == 2 || queries.rank() == 3),
          "queries " + Dims(queries) + " and keys " + Dims(keys) +
              " must both be [n, d] or [B, n, d]");
  const bool single = queries.rank() == 2;
  const Tensor q = Promote(g, queries);
  const Tensor k = Promote(g, keys);
  Require(q.dim(0) == k.dim(0) && q.dim(2) == k.dim(2),
          "queries " + Dims(queries) + " and keys " + Dims(keys) +
              " disagree in batch or feature dimension");
  const std::size_t batch = q.dim(0), nq = q.dim(1), n = k.dim(1), d = q.dim(2);
  const auto m = PromoteMask(key_mask, single);
  CheckMask(Ptr(m), batch, n, "key");
  Tensor scores = g.Scale(g.MatMul(q, g.Transpose(k)), 1.0 / std::sqrt(double(d)));
  std::optional<Mask> expanded;
  if (m) expanded = ExpandKeyMask(*m, nq);
  return Demote(g, g.RowSoftmax(scores, Ptr(expanded)), single);
}

Tensor DotAttention(Graph& g, const Tensor& queries, const Tensor& keys,
                    const Tensor& values, const Mask* key_mask) {
  Require(values.shape() == keys.shape(),
          "values " + Dims(values) + " must match keys " + Dims(keys));
  Tensor weights = DotAttentionWeights(g, queries, keys, key_mask);
  return g.MatMul(weights, values);
}

Tensor TransformedQueries(Graph& g, const Tensor& queries,
                          const Tensor& values, const Mask* query_mask) {
  Require(queries.rank() == values.rank() &&
              (queries.rank() == 2 || queries.rank() == 3),
          "queries " + Dims(queries) + " and values " + Dims(values) +
              " must both be [n, d] or [B, n, d]");
  const bool single = queries.rank() == 2;
  const Tensor q = Promote(g, queries);
  const Tensor v = Promote(g, values);
  Require(q.dim(0) == v.dim(0) && q.dim(2) == v.dim(2),
          "queries " + Dims(queries) + " and values " + Dims(values) +
              " disagree in batch or feature dimension");
  const std::size_t batch = q.dim(0), nq = q.dim(1), n = v.dim(1), d = q.dim(2);
  const auto m = PromoteMask(query_mask, single);
  CheckMask(Ptr(m), batch, nq, "query");
  Tensor scores = g.Scale(g.MatMul(v, g.Transpose(q)), 1.0 / std::sqrt(double(d)));
  std::optional<Mask> expanded;
  if (m) expanded = ExpandKeyMask(*m, n);
  Tensor weights = g.RowSoftmax(scores, Ptr(expanded));
  return Demote(g, g.MatMul(weights, q), single);
}

Tensor DotInteraction(Graph& g, const Tensor& queries, const Tensor& values,
                      const Tensor& W, const Mask* query_mask) {
  const std::size_t d = values.dim(-1);
  if (!W.defined()) throw ContractError("interaction map W is not defined");
  Require(W.shape() == Shape{d, d},
          "interaction map W must be [" + std::to_string(d) + "x" +
              std::to_string(d) + "], got " + Dims(W));
  Tensor qhat = TransformedQueries(g, queries, values, query_mask);
  return g.Mul(qhat, g.MatMul(values, g.Transpose(W)));
}

GatedValues QviGateDot(Graph& g, const Tensor& queries, const Tensor& values,
                       const HeadParams& params, GateMode mode,
                       const Mask* query_mask, const Mask* value_mask,
                       std::optional<double> gate_override) {
  CheckOverride(gate_override);
  const bool single = values.rank() == 2;
  Tensor inter = DotInteraction(g, queries, values, params.W, query_mask);
  const std::size_t d = values.dim(-1);
  const std::size_t n = values.dim(-2);
  Shape gate_shape = values.shape();
  gate_shape.back() = 1;
  Tensor gate;
  if (gate_override) {
    gate = Tensor::Full(gate_shape, *gate_override);
  } else {
    if (!params.h_gate.defined()) {
      throw ContractError("gate vector h_gate is not defined");
    }
    Require(params.h_gate.shape() == Shape{2 * d},
            "gate vector h_gate must have length " + std::to_string(2 * d) +
                ", got " + Dims(params.h_gate));
    Tensor logits = g.MatMul(g.ConcatFeatures(inter, values),
                             g.Reshape(params.h_gate, {2 * d, 1}));
    if (mode == GateMode::kPerPosition) {
      gate = g.Sigmoid(logits);
    } else {
      const std::size_t batch = single ? 1 : values.dim(0);
      const auto m = PromoteMask(value_mask, single);
      CheckMask(Ptr(m), batch, n, "value");
      Tensor weights = Tensor::Zeros({batch, n, 1});
      for (std::size_t b = 0; b < batch; ++b) {
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) count += !m || (*m)[b * n + i];
        if (count == 0) {
          throw DegenerateMaskError("value sequence " + std::to_string(b) +
                                    " is fully masked");
        }
        for (std::size_t i = 0; i < n; ++i)
          if (!m || (*m)[b * n + i]) weights[b * n + i] = 1.0 / count;
      }
      Tensor pooled = g.Reduce(ReduceOp::kSum,
                               g.Mul(g.Reshape(logits, {batch, n, 1}), weights), 1);
      Shape scalar_shape = single ? Shape{1, 1} : Shape{batch, 1, 1};
      gate = g.Sigmoid(g.Reshape(pooled, scalar_shape));
    }
  }
  return {GateMix(g, inter, values, gate), gate};
}

Tensor DotValueFunction(Graph& g, const Tensor& queries, const Tensor& values,
                        const AttentionConfig& config,
                        const HeadParams& params, const Mask* query_mask,
                        const Mask* value_mask) {
  switch (config.value_fn) {
    case ValueFn::kStandard:
    case ValueFn::kValuesOnly:
      return values;
    case ValueFn::kInteractionsOnly:
      return DotInteraction(g, queries, values, params.W, query_mask);
    case ValueFn::kSimpleSum:
      return g.Add(DotInteraction(g, queries, values, params.W, query_mask),
                   values);
    case ValueFn::kQvi:
      return QviGateDot(g, queries, values, params, config.gate_mode,
                        query_mask, value_mask, config.gate_override)
          .values;
  }
  throw ContractError("unhandled value function");
}

Tensor QviDotAttention(Graph& g, const Tensor& queries, const Tensor& keys,
                       const Tensor& values, const Mask* query_mask,
                       const Mask* key_mask, const AttentionConfig& config,
                       const HeadParams& params) {
  Require(values.shape() == keys.shape(),
          "values " + Dims(values) + " must match keys " + Dims(keys));
  Tensor weights = DotAttentionWeights(g, queries, keys, key_mask);
  Tensor G = DotValueFunction(g, queries, values, config, params, query_mask,
                              key_mask);
  return g.MatMul(weights, G);
}

Tensor MultiHeadSelfAttention(Graph& g, const Tensor& x, const Mask* mask,
                              const AttentionConfig& config,
                              const MultiHeadParams& params) {
  Require(x.rank() == 3, "self-attention input must be [B, N, d_model], got " +
                             Dims(x));
  const std::size_t d_model = x.dim(2);
  Require(params.heads.size() == config.heads && !params.heads.empty(),
          "multi-head params have " + std::to_string(params.heads.size()) +
              " heads, config wants " + std::to_string(config.heads));
  Require(params.out_proj.shape() ==
              Shape{config.heads * config.dim, d_model},
          "output projection " + Dims(params.out_proj) +
              " inconsistent with heads x d_head and d_model " +
              std::to_string(d_model));
  std::vector<Tensor> outputs;
  outputs.reserve(params.heads.size());
  for (const HeadParams& head : params.heads) {
    Require(head.query_proj.shape() == Shape{d_model, config.dim},
            "head projection " + Dims(head.query_proj) +
                " inconsistent with d_model " + std::to_string(d_model) +
                " and d_head " + std::to_string(config.dim));
    Tensor q = g.MatMul(x, head.query_proj);
    Tensor k = g.MatMul(x, head.key_proj);
    Tensor v = g.MatMul(x, head.value_proj);
    outputs.push_back(QviDotAttention(g, q, k, v, mask, mask, config, head));
  }
  Tensor joined = outputs.size() == 1 ? outputs[0] : g.Concat(outputs);
  return g.MatMul(joined, params.out_proj);
}

}  // namespace qvi
