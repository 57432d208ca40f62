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

// Attention with query-value interactions (QVI).
//
// Standard attention computes O = f(Q, K) V: weights from query-key scores,
// applied to the raw values. QVI replaces V with query-aware values
// g(Q, V), a gated mix of the original values and their element-wise
// interaction with the (transformed) query:
//
//   additive:     g(q, v_i) = (1 - b_i) * (q * W v_i) + b_i * v_i
//                 b_i       = sigmoid(u . [q * W v_i ; v_i])
//   dot-product:  Qh        = softmax(V Q^T / sqrt(d)) Q     (one row per value)
//                 M         = Qh * (V W^T)
//                 g(Q, V)   = (1 - b) * M + b * V
//
// `*` is the element-wise product. The ablation value functions replace g
// with V (values only), M (interactions only) or M + V (simple sum).
//
// All functions take batched inputs: values [B, N, d], a per-sample query
// [B, d] or a shared query [d], masks [B, N]. Rank-2 values [N, d] are
// accepted as a batch of one and the result is returned without the batch
// axis.

#ifndef QVI_ATTENTION_H_
#define QVI_ATTENTION_H_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qvi/graph.h"
#include "qvi/params.h"
#include "qvi/tensor.h"

namespace qvi {

enum class AttentionForm { kAdditive, kDotProduct };

enum class ValueFn {
  kStandard,          // g = V
  kQvi,               // gated interaction
  kValuesOnly,        // g1 = V
  kInteractionsOnly,  // g2 = q * W V
  kSimpleSum,         // g3 = q * W V + V
};

// Only meaningful for dot-product QVI.
enum class GateMode {
  kPerPosition,  // one gate per value row
  kScalar,       // one gate per sequence, from the masked row mean
};

// Score function h(q, v) of additive attention.
enum class ScoreFn {
  kDot,  // q . v
  kMlp,  // a . tanh(Wq q + Wv v + c), hidden size = d
};

std::string_view ToString(AttentionForm v);
std::string_view ToString(ValueFn v);
std::string_view ToString(GateMode v);
std::string_view ToString(ScoreFn v);
// Parsers throw ContractError on unknown names.
AttentionForm ParseAttentionForm(std::string_view s);
ValueFn ParseValueFn(std::string_view s);
GateMode ParseGateMode(std::string_view s);
ScoreFn ParseScoreFn(std::string_view s);

// True for value functions that need the interaction map W.
bool UsesInteraction(ValueFn v);
// True for the gated value function (needs u / h_gate).
bool UsesGate(ValueFn v);

struct AttentionConfig {
  AttentionForm form = AttentionForm::kAdditive;
  ValueFn value_fn = ValueFn::kQvi;
  GateMode gate_mode = GateMode::kPerPosition;
  ScoreFn score_fn = ScoreFn::kDot;
  std::size_t dim = 0;
  std::size_t heads = 1;
  // Forces the gate to this constant, bypassing the learned gate. Testing
  // hook; rejected by training configs.
  std::optional<double> gate_override;

  void Validate() const;
};

struct MlpScoreParams {
  Tensor query_proj;  // [d, d]
  Tensor value_proj;  // [d, d]
  Tensor bias;        // [d]
  Tensor out;         // [d]
};

struct AdditiveParams {
  Tensor query;  // [d], used when no external query is supplied
  std::optional<MlpScoreParams> mlp;
  Tensor W;  // [d, d]; defined iff UsesInteraction(value_fn)
  Tensor u;  // [2d];  defined iff UsesGate(value_fn)
};

struct HeadParams {
  Tensor query_proj;  // [d_model, d_head]
  Tensor key_proj;    // [d_model, d_head]
  Tensor value_proj;  // [d_model, d_head]
  Tensor W;           // [d_head, d_head]; defined iff UsesInteraction
  Tensor h_gate;      // [2 d_head];       defined iff UsesGate
};

struct MultiHeadParams {
  std::vector<HeadParams> heads;
  Tensor out_proj;  // [heads * d_head, d_model]
};

// Registers additive-attention parameters under `prefix` with the
// default initialization: query ~ N(0, 0.1^2), W = I + N(0, 0.01^2),
// u = 0 (gate starts at 0.5), MLP projections Xavier, MLP output 0.
// With `parameter_query` false no query is registered and callers must
// supply one.
AdditiveParams CreateAdditiveParams(ParamStore& store,
                                    const std::string& prefix,
                                    const AttentionConfig& config,
                                    bool parameter_query = true);

// Registers multi-head parameters; config.dim is d_head.
MultiHeadParams CreateMultiHeadParams(ParamStore& store,
                                      const std::string& prefix,
                                      const AttentionConfig& config,
                                      std::size_t d_model);

// Gated values together with the gate that produced them.
struct GatedValues {
  Tensor values;  // [B, N, d]
  // [B, N, 1] per position, [B, 1, 1] scalar; constant under override.
  Tensor gate;
};

// ---- Additive attention ---------------------------------------------------

// Attention weights alpha = softmax_i(h(q, v_i)) over unmasked positions.
Tensor AdditiveScores(Graph& g, const Tensor& query, const Tensor& values,
                      const Mask* mask, const AdditiveParams& params,
                      ScoreFn score_fn);

// o = sum_i alpha_i G_i.
Tensor AdditivePool(Graph& g, const Tensor& alpha, const Tensor& values);

// q * W v_i for every row.
Tensor AdditiveInteraction(Graph& g, const Tensor& query, const Tensor& values,
                           const Tensor& W);

GatedValues QviGateAdditive(Graph& g, const Tensor& query,
                            const Tensor& values, const AdditiveParams& params,
                            std::optional<double> gate_override = {});

// g(q, V) for the configured value function.
Tensor AdditiveValueFunction(Graph& g, const Tensor& query,
                             const Tensor& values,
                             const AttentionConfig& config,
                             const AdditiveParams& params);

// Full additive attention. A null `query` selects params.query.
Tensor AdditiveAttention(Graph& g, const Tensor* query, const Tensor& values,
                         const Mask* mask, const AttentionConfig& config,
                         const AdditiveParams& params);

// ---- Dot-product attention ------------------------------------------------

// softmax(Q K^T / sqrt(d)) with masked keys: [B, n_q, N].
Tensor DotAttentionWeights(Graph& g, const Tensor& queries, const Tensor& keys,
                           const Mask* key_mask);

Tensor DotAttention(Graph& g, const Tensor& queries, const Tensor& keys,
                    const Tensor& values, const Mask* key_mask);

// Qh = softmax(V Q^T / sqrt(d)) Q, one row per value; padded queries are
// masked out of each row's softmax.
Tensor TransformedQueries(Graph& g, const Tensor& queries,
                          const Tensor& values, const Mask* query_mask);

// Qh * (V W^T).
Tensor DotInteraction(Graph& g, const Tensor& queries, const Tensor& values,
                      const Tensor& W, const Mask* query_mask);

GatedValues QviGateDot(Graph& g, const Tensor& queries, const Tensor& values,
                       const HeadParams& params, GateMode mode,
                       const Mask* query_mask, const Mask* value_mask,
                       std::optional<double> gate_override = {});

Tensor DotValueFunction(Graph& g, const Tensor& queries, const Tensor& values,
                        const AttentionConfig& config,
                        const HeadParams& params, const Mask* query_mask,
                        const Mask* value_mask);

// softmax(Q K^T / sqrt(d)) g(Q, V). Keys and values share `key_mask`.
Tensor QviDotAttention(Graph& g, const Tensor& queries, const Tensor& keys,
                       const Tensor& values, const Mask* query_mask,
                       const Mask* key_mask, const AttentionConfig& config,
                       const HeadParams& params);

// Self-attention over X [B, N, d_model] with per-head QVI; result
// [B, N, d_model].
Tensor MultiHeadSelfAttention(Graph& g, const Tensor& x, const Mask* mask,
                              const AttentionConfig& config,
                              const MultiHeadParams& params);

// [B, N] key mask broadcast to [B, rows, N].
Mask ExpandKeyMask(const Mask& key_mask, std::size_t rows);

}  // namespace qvi

#endif  // QVI_ATTENTION_H_
