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

// Classifiers built on the attention layers.
//
// additive_pool: embed -> dropout -> additive attention with a learned
// query -> linear classifier. In vector input mode the embedding is
// skipped and each batch supplies its own query and values.
//
// transformer: token + learned position embeddings -> L encoder blocks
// (self-attention, dropout, residual, layer norm, ReLU FFN, dropout,
// residual, layer norm) -> masked mean over positions -> classifier.

#ifndef QVI_MODEL_H_
#define QVI_MODEL_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qvi/attention.h"
#include "qvi/data.h"
#include "qvi/graph.h"
#include "qvi/params.h"
#include "qvi/rng.h"

namespace qvi {

enum class ModelKind { kAdditivePool, kTransformer };
enum class InputMode { kTokens, kVectors };

std::string_view ToString(ModelKind v);
std::string_view ToString(InputMode v);
ModelKind ParseModelKind(std::string_view s);
InputMode ParseInputMode(std::string_view s);

struct ModelConfig {
  ModelKind kind = ModelKind::kAdditivePool;
  InputMode input = InputMode::kTokens;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;  // d_model; the vector size in vector mode
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t ffn_dim = 128;
  double dropout = 0.2;
  std::size_t num_classes = 2;
  std::size_t max_len = 128;
  // form and dim are derived from the model kind; the rest selects the
  // variant.
  AttentionConfig attention;

  // Throws ConfigError naming the offending field.
  void Validate() const;
  // The attention config with form and dim filled in.
  AttentionConfig ResolvedAttention() const;
};

// Exact number of learnable scalars a model built from `config` owns.
std::size_t CountParameters(const ModelConfig& config);

class Model {
 public:
  // Parameters are initialized from streams keyed by (seed, name).
  Model(const ModelConfig& config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Logits [B, num_classes]. A null `dropout_rng` disables dropout
  // (evaluation).
  Tensor Forward(Graph& g, const Batch& batch, Rng* dropout_rng = nullptr) const;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t NumParameters() const { return store_.NumScalars(); }

 private:
  struct Block {
    MultiHeadParams attn;
    Tensor ln1_gain, ln1_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_gain, ln2_bias;
  };

  Tensor ForwardAdditive(Graph& g, const Batch& batch, Rng* rng) const;
  Tensor ForwardTransformer(Graph& g, const Batch& batch, Rng* rng) const;
  Tensor Classify(Graph& g, const Tensor& pooled) const;
  void CheckTokens(const Batch& batch) const;

  ModelConfig config_;
  AttentionConfig attention_;
  ParamStore store_;
  Tensor embedding_;  // [vocab, d]
  Tensor positions_;  // [max_len, d]
  AdditiveParams pool_;
  std::vector<Block> blocks_;
  Tensor classifier_w_;  // [d, classes]
  Tensor classifier_b_;  // [classes]
};

// Text checkpoint:
//   QVI-CHECKPOINT 1
//   [config]
//   key = value            (one line per ModelConfig field)
//   [vocab] <count>        (optional; one token per line)
//   [param] <name> <dim0>x<dim1>...
//   <values, space separated hexfloat, one line per parameter>
//   [end]
// Hexfloat values make save/load bit-exact.
struct Checkpoint {
  ModelConfig config;
  std::optional<Vocab> vocab;
  std::vector<NamedParam> params;
};

void WriteCheckpoint(std::ostream& out, const Model& model,
                     const Vocab* vocab = nullptr);
Checkpoint ReadCheckpoint(std::istream& in);
// Builds a model from the checkpoint config and copies its parameters in.
// Throws ParseError when names or shapes disagree.
Model RestoreModel(const Checkpoint& checkpoint);

// Config serialization shared by checkpoints and run directories.
std::vector<std::pair<std::string, std::string>> ModelConfigEntries(
    const ModelConfig& config);
// Applies one "key = value" pair (keys as in ModelConfigEntries); throws
// ConfigError.
void SetModelConfigEntry(ModelConfig& config, const std::string& key,
                         const std::string& value);

}  // namespace qvi

#endif  // QVI_MODEL_H_
