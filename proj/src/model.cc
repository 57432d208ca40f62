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

#include "qvi/model.h"

#include <algorithm>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include "qvi/error.h"
#include "qvi/text.h"

namespace qvi {
namespace {

void Check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

std::size_t AsSize(const std::string& key, const std::string& value) {
  auto v = ParseUint(Trim(value));
  if (!v) throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(*v);
}

double AsDouble(const std::string& key, const std::string& value) {
  auto v = ParseDouble(Trim(value));
  if (!v) throw ConfigError(key, "expected a number, got '" + value + "'");
  return *v;
}

template <typename Fn>
auto AsEnum(const std::string& key, const std::string& value, Fn parse) {
  try {
    return parse(Trim(value));
  } catch (const ContractError& e) {
    throw ConfigError(key, e.what());
  }
}

std::size_t AdditiveCount(const AttentionConfig& a, bool parameter_query) {
  const std::size_t d = a.dim;
  std::size_t n = parameter_query ? d : 0;
  if (a.score_fn == ScoreFn::kMlp) n += 2 * d * d + 2 * d;
  if (UsesInteraction(a.value_fn)) n += d * d;
  if (UsesGate(a.value_fn)) n += 2 * d;
  return n;
}

std::size_t HeadExtras(const AttentionConfig& a) {
  const std::size_t dh = a.dim;
  std::size_t n = 0;
  if (UsesInteraction(a.value_fn)) n += dh * dh;
  if (UsesGate(a.value_fn)) n += 2 * dh;
  return n;
}

}  // namespace

std::string_view ToString(ModelKind v) {
  return v == ModelKind::kAdditivePool ? "additive_pool" : "transformer";
}

std::string_view ToString(InputMode v) {
  return v == InputMode::kTokens ? "tokens" : "vectors";
}

ModelKind ParseModelKind(std::string_view s) {
  if (s == "additive_pool") return ModelKind::kAdditivePool;
  if (s == "transformer") return ModelKind::kTransformer;
  throw ContractError("unknown model kind '" + std::string(s) +
                      "' (additive_pool, transformer)");
}

InputMode ParseInputMode(std::string_view s) {
  if (s == "tokens") return InputMode::kTokens;
  if (s == "vectors") return InputMode::kVectors;
  throw ContractError("unknown input mode '" + std::string(s) +
                      "' (tokens, vectors)");
}

void ModelConfig::Validate() const {
  Check(embed_dim > 0, "model.embed_dim", "must be positive");
  Check(num_classes >= 2, "model.num_classes", "must be at least 2");
  Check(dropout >= 0.0 && dropout < 1.0, "model.dropout", "must lie in [0, 1)");
  if (input == InputMode::kTokens) {
    Check(vocab_size >= 2, "model.vocab_size",
          "must be at least 2 (PAD and UNK are reserved)");
  }
  if (kind == ModelKind::kTransformer) {
    Check(input == InputMode::kTokens, "model.input",
          "the transformer only takes token input");
    Check(heads > 0, "model.heads", "must be positive");
    Check(head_dim > 0, "model.head_dim", "must be positive");
    Check(heads * head_dim == embed_dim, "model.heads",
          "heads x head_dim = " + std::to_string(heads * head_dim) +
              " must equal embed_dim = " + std::to_string(embed_dim));
    Check(ffn_dim > 0, "model.ffn_dim", "must be positive");
    Check(max_len > 0, "model.max_len", "must be positive");
  }
  if (attention.gate_override) {
    const double b = *attention.gate_override;
    Check(b >= 0.0 && b <= 1.0, "attention.gate_override", "must lie in [0, 1]");
  }
}

AttentionConfig ModelConfig::ResolvedAttention() const {
  AttentionConfig a = attention;
  if (kind == ModelKind::kAdditivePool) {
    a.form = AttentionForm::kAdditive;
    a.dim = embed_dim;
    a.heads = 1;
  } else {
    a.form = AttentionForm::kDotProduct;
    a.dim = head_dim;
    a.heads = heads;
  }
  return a;
}

std::size_t CountParameters(const ModelConfig& config) {
  config.Validate();
  const AttentionConfig a = config.ResolvedAttention();
  const std::size_t d = config.embed_dim, c = config.num_classes;
  std::size_t n = d * c + c;
  if (config.kind == ModelKind::kAdditivePool) {
    const bool tokens = config.input == InputMode::kTokens;
    if (tokens) n += config.vocab_size * d;
    return n + AdditiveCount(a, tokens);
  }
  n += config.vocab_size * d + config.max_len * d;
  const std::size_t f = config.ffn_dim;
  const std::size_t per_layer = config.heads * (3 * d * a.dim + HeadExtras(a)) +
                                config.heads * a.dim * d +  // output projection
                                4 * d +                      // two layer norms
                                d * f + f + f * d + d;       // FFN
  return n + config.layers * per_layer;
}

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config), store_(seed) {
  config_.Validate();
  attention_ = config_.ResolvedAttention();
  const std::size_t d = config_.embed_dim;
  const bool tokens = config_.input == InputMode::kTokens;
  if (tokens) {
    embedding_ = store_.Create("embed.table", {config_.vocab_size, d},
                               Init::Normal(0.1));
  }
  if (config_.kind == ModelKind::kAdditivePool) {
    pool_ = CreateAdditiveParams(store_, "pool", attention_, tokens);
  } else {
    positions_ = store_.Create("embed.position", {config_.max_len, d},
                               Init::Normal(0.1));
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      Block b;
      b.attn = CreateMultiHeadParams(store_, p + ".attn", attention_, d);
      b.ln1_gain = store_.Create(p + ".ln1.gain", {d}, Init::Ones());
      b.ln1_bias = store_.Create(p + ".ln1.bias", {d}, Init::Zeros());
      b.ffn_w1 = store_.Create(p + ".ffn.w1", {d, config_.ffn_dim}, Init::Xavier());
      b.ffn_b1 = store_.Create(p + ".ffn.b1", {config_.ffn_dim}, Init::Zeros());
      b.ffn_w2 = store_.Create(p + ".ffn.w2", {config_.ffn_dim, d}, Init::Xavier());
      b.ffn_b2 = store_.Create(p + ".ffn.b2", {d}, Init::Zeros());
      b.ln2_gain = store_.Create(p + ".ln2.gain", {d}, Init::Ones());
      b.ln2_bias = store_.Create(p + ".ln2.bias", {d}, Init::Zeros());
      blocks_.push_back(std::move(b));
    }
  }
  classifier_w_ = store_.Create("classifier.weight", {d, config_.num_classes},
                                Init::Xavier());
  classifier_b_ = store_.Create("classifier.bias", {config_.num_classes},
                                Init::Zeros());
}

Tensor Model::Forward(Graph& g, const Batch& batch, Rng* dropout_rng) const {
  if (batch.batch_size == 0) throw ContractError("empty batch");
  if (batch.mask.shape != Shape{batch.batch_size, batch.length}) {
    throw DimensionError("batch mask " + ShapeString(batch.mask.shape) +
                         " does not match B x N");
  }
  return config_.kind == ModelKind::kAdditivePool
             ? ForwardAdditive(g, batch, dropout_rng)
             : ForwardTransformer(g, batch, dropout_rng);
}

void Model::CheckTokens(const Batch& batch) const {
  if (batch.token_ids.size() != batch.batch_size * batch.length) {
    throw DataError("token model needs token ids; got a batch without them");
  }
  for (int id : batch.token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw DataError("token id " + std::to_string(id) +
                      " outside vocabulary of size " +
                      std::to_string(config_.vocab_size) +
                      " (map unknown tokens to UNK first)");
    }
  }
}

Tensor Model::Classify(Graph& g, const Tensor& pooled) const {
  return g.Add(g.MatMul(pooled, classifier_w_), classifier_b_);
}

Tensor Model::ForwardAdditive(Graph& g, const Batch& batch, Rng* rng) const {
  if (config_.input == InputMode::kVectors) {
    if (!batch.query.defined() || !batch.values.defined()) {
      throw DataError("vector model needs a batch with query and values");
    }
    Tensor pooled = AdditiveAttention(g, &batch.query, batch.values, &batch.mask,
                                      attention_, pool_);
    return Classify(g, pooled);
  }
  CheckTokens(batch);
  Tensor x = g.Embedding(embedding_, batch.token_ids,
                         {batch.batch_size, batch.length});
  if (rng) x = g.Dropout(x, config_.dropout, *rng);
  Tensor pooled = AdditiveAttention(g, nullptr, x, &batch.mask, attention_, pool_);
  return Classify(g, pooled);
}

Tensor Model::ForwardTransformer(Graph& g, const Batch& batch, Rng* rng) const {
  CheckTokens(batch);
  const std::size_t B = batch.batch_size, N = batch.length;
  if (N > config_.max_len) {
    throw DataError("sequence length " + std::to_string(N) + " exceeds max_len " +
                    std::to_string(config_.max_len));
  }
  std::vector<int> pos(N);
  std::iota(pos.begin(), pos.end(), 0);
  Tensor x = g.Add(g.Embedding(embedding_, batch.token_ids, {B, N}),
                   g.Embedding(positions_, pos, {N}));
  if (rng) x = g.Dropout(x, config_.dropout, *rng);
  for (const Block& b : blocks_) {
    Tensor a = MultiHeadSelfAttention(g, x, &batch.mask, attention_, b.attn);
    if (rng) a = g.Dropout(a, config_.dropout, *rng);
    x = g.LayerNorm(g.Add(x, a), b.ln1_gain, b.ln1_bias);
    Tensor h = g.Relu(g.Add(g.MatMul(x, b.ffn_w1), b.ffn_b1));
    Tensor f = g.Add(g.MatMul(h, b.ffn_w2), b.ffn_b2);
    if (rng) f = g.Dropout(f, config_.dropout, *rng);
    x = g.LayerNorm(g.Add(x, f), b.ln2_gain, b.ln2_bias);
  }
  // Masked mean: weight kept positions by 1 / count, padding by 0.
  Tensor weights = Tensor::Zeros({B, N, 1});
  for (std::size_t r = 0; r < B; ++r) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < N; ++i) count += batch.mask[r * N + i] ? 1 : 0;
    if (count == 0) {
      throw DegenerateMaskError("sequence " + std::to_string(r) +
                                " has no unmasked position");
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (batch.mask[r * N + i]) weights[r * N + i] = 1.0 / static_cast<double>(count);
    }
  }
  Tensor pooled = g.Reduce(ReduceOp::kSum, g.Mul(x, weights), 1);
  return Classify(g, pooled);
}

// ---- Config entries -------------------------------------------------------

std::vector<std::pair<std::string, std::string>> ModelConfigEntries(
    const ModelConfig& c) {
  std::vector<std::pair<std::string, std::string>> e = {
      {"model.kind", std::string(ToString(c.kind))},
      {"model.input", std::string(ToString(c.input))},
      {"model.vocab_size", std::to_string(c.vocab_size)},
      {"model.embed_dim", std::to_string(c.embed_dim)},
      {"model.layers", std::to_string(c.layers)},
      {"model.heads", std::to_string(c.heads)},
      {"model.head_dim", std::to_string(c.head_dim)},
      {"model.ffn_dim", std::to_string(c.ffn_dim)},
      {"model.dropout", FormatExact(c.dropout)},
      {"model.num_classes", std::to_string(c.num_classes)},
      {"model.max_len", std::to_string(c.max_len)},
      {"attention.value_fn", std::string(ToString(c.attention.value_fn))},
      {"attention.gate_mode", std::string(ToString(c.attention.gate_mode))},
      {"attention.score_fn", std::string(ToString(c.attention.score_fn))},
  };
  if (c.attention.gate_override) {
    e.emplace_back("attention.gate_override", FormatExact(*c.attention.gate_override));
  }
  return e;
}

void SetModelConfigEntry(ModelConfig& c, const std::string& key,
                         const std::string& value) {
  if (key == "model.kind") {
    c.kind = AsEnum(key, value, ParseModelKind);
  } else if (key == "model.input") {
    c.input = AsEnum(key, value, ParseInputMode);
  } else if (key == "model.vocab_size") {
    c.vocab_size = AsSize(key, value);
  } else if (key == "model.embed_dim") {
    c.embed_dim = AsSize(key, value);
  } else if (key == "model.layers") {
    c.layers = AsSize(key, value);
  } else if (key == "model.heads") {
    c.heads = AsSize(key, value);
  } else if (key == "model.head_dim") {
    c.head_dim = AsSize(key, value);
  } else if (key == "model.ffn_dim") {
    c.ffn_dim = AsSize(key, value);
  } else if (key == "model.dropout") {
    c.dropout = AsDouble(key, value);
  } else if (key == "model.num_classes") {
    c.num_classes = AsSize(key, value);
  } else if (key == "model.max_len") {
    c.max_len = AsSize(key, value);
  } else if (key == "attention.value_fn") {
    c.attention.value_fn = AsEnum(key, value, ParseValueFn);
  } else if (key == "attention.gate_mode") {
    c.attention.gate_mode = AsEnum(key, value, ParseGateMode);
  } else if (key == "attention.score_fn") {
    c.attention.score_fn = AsEnum(key, value, ParseScoreFn);
  } else if (key == "attention.gate_override") {
    c.attention.gate_override = AsDouble(key, value);
  } else {
    throw ConfigError(key, "unknown key");
  }
}

// ---- Checkpoints ----------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "QVI-CHECKPOINT 1";

Shape ParseShape(std::string_view s, std::size_t line) {
  Shape shape;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t x = s.find('x', start);
    auto v = ParseUint(s.substr(start, x == std::string_view::npos ? x : x - start));
    if (!v || *v == 0) throw ParseError("bad shape '" + std::string(s) + "'", line);
    shape.push_back(static_cast<std::size_t>(*v));
    if (x == std::string_view::npos) break;
    start = x + 1;
  }
  return shape;
}

std::string ShapeToken(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? "x" : "") + std::to_string(shape[i]);
  }
  return s;
}

}  // namespace

void WriteCheckpoint(std::ostream& out, const Model& model, const Vocab* vocab) {
  out << kMagic << "\n[config]\n";
  for (const auto& [k, v] : ModelConfigEntries(model.config())) {
    out << k << " = " << v << "\n";
  }
  if (vocab) {
    out << "[vocab] " << vocab->size() << "\n";
    for (const std::string& t : vocab->tokens()) out << t << "\n";
  }
  for (const NamedParam& p : model.params().params()) {
    out << "[param] " << p.name << " " << ShapeToken(p.tensor.shape()) << "\n";
    const auto data = p.tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      out << (i ? " " : "") << FormatHex(data[i]);
    }
    out << "\n";
  }
  out << "[end]\n";
}

Checkpoint ReadCheckpoint(std::istream& in) {
  Checkpoint ckpt;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || Trim(line) != kMagic) {
    throw ParseError("not a checkpoint (expected '" + std::string(kMagic) + "')", 1);
  }
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw ParseError(std::string("unexpected end of file, expected ") + what,
                       line_no + 1);
    }
    ++line_no;
    return std::string(Trim(line));
  };
  std::string cur = next("[config]");
  if (cur != "[config]") throw ParseError("expected [config]", line_no);
  cur = next("a config entry");
  while (!cur.empty() && cur[0] != '[') {
    const std::size_t eq = cur.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    try {
      SetModelConfigEntry(ckpt.config, std::string(Trim(cur.substr(0, eq))),
                          std::string(Trim(cur.substr(eq + 1))));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
    cur = next("a section");
  }
  if (cur.rfind("[vocab]", 0) == 0) {
    auto count = ParseUint(Trim(std::string_view(cur).substr(7)));
    if (!count) throw ParseError("bad vocab count", line_no);
    std::vector<std::string> tokens;
    for (std::uint64_t i = 0; i < *count; ++i) tokens.push_back(next("a token"));
    try {
      ckpt.vocab = Vocab::FromTokens(std::move(tokens));
    } catch (const DataError& e) {
      throw ParseError(e.what(), line_no);
    }
    cur = next("a section");
  }
  while (cur.rfind("[param]", 0) == 0) {
    const auto fields = SplitWhitespace(cur);
    if (fields.size() != 3) throw ParseError("expected '[param] name shape'", line_no);
    Shape shape = ParseShape(fields[2], line_no);
    std::string name(fields[1]);
    const std::string values = next("parameter values");
    const auto items = SplitWhitespace(values);
    if (items.size() != NumElements(shape)) {
      throw ParseError("parameter " + name + " needs " +
                           std::to_string(NumElements(shape)) + " values, got " +
                           std::to_string(items.size()),
                       line_no);
    }
    std::vector<double> data;
    data.reserve(items.size());
    for (std::string_view item : items) {
      auto v = ParseDouble(item);
      if (!v) throw ParseError("bad number '" + std::string(item) + "'", line_no);
      data.push_back(*v);
    }
    ckpt.params.push_back({name, Tensor::FromData(shape, std::move(data))});
    cur = next("a section");
  }
  if (cur != "[end]") throw ParseError("unexpected line '" + cur + "'", line_no);
  return ckpt;
}

Model RestoreModel(const Checkpoint& ckpt) {
  Model model(ckpt.config, 0);
  const auto& params = model.params().params();
  if (params.size() != ckpt.params.size()) {
    throw ParseError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                     " parameters, its config builds " +
                     std::to_string(params.size()));
  }
  std::map<std::string, const Tensor*> saved;
  for (const NamedParam& p : ckpt.params) saved[p.name] = &p.tensor;
  for (const NamedParam& p : params) {
    auto it = saved.find(p.name);
    if (it == saved.end()) throw ParseError("checkpoint lacks parameter " + p.name);
    if (it->second->shape() != p.tensor.shape()) {
      throw ParseError("parameter " + p.name + " has shape " +
                       ShapeString(it->second->shape()) + ", expected " +
                       ShapeString(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    std::copy(it->second->data().begin(), it->second->data().end(),
              dst.data().begin());
  }
  return model;
}

}  // namespace qvi
