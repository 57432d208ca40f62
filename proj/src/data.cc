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

#include "qvi/data.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "qvi/error.h"
#include "qvi/rng.h"
#include "qvi/text.h"

namespace qvi {
namespace {

template <typename T>
bool ParseNumber(std::string_view s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// "key=value" fields of a header line after the magic prefix.
std::map<std::string, std::string> HeaderFields(std::string_view line) {
  std::map<std::string, std::string> fields;
  for (std::string_view item : SplitWhitespace(line)) {
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) continue;
    fields.emplace(item.substr(0, eq), item.substr(eq + 1));
  }
  return fields;
}

std::uint64_t HeaderNumber(const std::map<std::string, std::string>& fields,
                           const std::string& key) {
  auto it = fields.find(key);
  std::uint64_t v = 0;
  if (it == fields.end() || !ParseNumber(std::string_view(it->second), v)) {
    throw ParseError("header field '" + key + "' missing or not a number", 1);
  }
  return v;
}

void StripCr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

void Dataset::Validate() const {
  if (num_classes == 0) throw DataError("dataset has no classes");
  for (std::size_t s = 0; s < examples.size(); ++s) {
    const Example& e = examples[s];
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= num_classes) {
      throw DataError("sample " + std::to_string(s) + " has label " +
                      std::to_string(e.label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    if (kind == DatasetKind::kTokens) {
      if (e.tokens.empty()) {
        throw DataError("sample " + std::to_string(s) + " has no tokens");
      }
    } else if (e.query.size() != dim || e.values.size() != length * dim) {
      throw DataError("sample " + std::to_string(s) +
                      " does not match the dataset's N=" +
                      std::to_string(length) + ", d=" + std::to_string(dim));
    }
  }
}

// ---- Vocab ----------------------------------------------------------------

Vocab::Vocab() {
  tokens_ = {std::string(kPadToken), std::string(kUnkToken)};
  ids_.emplace(tokens_[0], kPad);
  ids_.emplace(tokens_[1], kUnk);
}

Vocab Vocab::FromTokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
    throw DataError("vocabulary must start with " + std::string(kPadToken) +
                    " and " + std::string(kUnkToken));
  }
  Vocab v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw DataError("empty token in vocabulary");
    if (!v.ids_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    v.tokens_.push_back(std::move(tokens[i]));
  }
  return v;
}

Vocab Vocab::Build(const std::vector<std::vector<std::string>>& documents,
                   std::size_t min_freq) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& doc : documents)
    for (const std::string& t : doc) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, count] : counts) {
    if (count >= min_freq && token != kPadToken && token != kUnkToken) {
      kept.emplace_back(token, count);
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens = {std::string(kPadToken),
                                     std::string(kUnkToken)};
  for (auto& [token, count] : kept) tokens.push_back(token);
  return FromTokens(std::move(tokens));
}

int Vocab::Id(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::Token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

bool Vocab::Contains(std::string_view token) const {
  return ids_.find(token) != ids_.end();
}

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (std::string_view word : SplitWhitespace(text)) {
    std::string t(word);
    for (char& c : t)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    out.push_back(std::move(t));
  }
  return out;
}

// ---- TSV corpus -------------------------------------------------------------

Corpus ParseTsvCorpus(std::istream& in, const Vocab* vocab,
                      const CorpusOptions& options) {
  if (options.max_len == 0) throw DataError("max_len must be positive");
  std::vector<int> labels;
  std::vector<std::vector<std::string>> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    StripCr(line);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("expected '<label>\\t<text>'", line_no);
    }
    int label = 0;
    if (!ParseNumber(std::string_view(line).substr(0, tab), label) ||
        label < 0) {
      throw ParseError("label '" + line.substr(0, tab) +
                           "' is not a non-negative integer",
                       line_no);
    }
    std::vector<std::string> tokens =
        Tokenize(std::string_view(line).substr(tab + 1));
    if (tokens.empty()) {
      throw DataError("line " + std::to_string(line_no) + ": empty text");
    }
    labels.push_back(label);
    docs.push_back(std::move(tokens));
  }
  if (docs.empty()) throw DataError("corpus contains no samples");

  Corpus corpus;
  corpus.vocab = vocab ? *vocab : Vocab::Build(docs, options.min_freq);
  Dataset& ds = corpus.dataset;
  ds.kind = DatasetKind::kTokens;
  int max_label = *std::max_element(labels.begin(), labels.end());
  ds.num_classes = options.num_classes
                       ? options.num_classes
                       : static_cast<std::size_t>(max_label) + 1;
  for (std::size_t s = 0; s < docs.size(); ++s) {
    Example e;
    e.label = labels[s];
    const std::size_t n = std::min(docs[s].size(), options.max_len);
    for (std::size_t i = 0; i < n; ++i) {
      e.tokens.push_back(corpus.vocab.Id(docs[s][i]));
    }
    ds.examples.push_back(std::move(e));
  }
  ds.Validate();
  return corpus;
}

Corpus LoadTsvCorpus(const std::string& path, const Vocab* vocab,
                     const CorpusOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  return ParseTsvCorpus(in, vocab, options);
}

// ---- Generators -------------------------------------------------------------

Dataset GenGatedRetrieval(std::size_t n, std::size_t length, std::size_t dim,
                          std::uint64_t seed) {
  if (n == 0 || length == 0 || dim == 0) {
    throw ContractError("gated retrieval needs n, N, d >= 1");
  }
  Rng rng = Rng::Derive(seed, "gated_retrieval");
  Dataset ds;
  ds.kind = DatasetKind::kVectors;
  ds.num_classes = 2;
  ds.length = length;
  ds.dim = dim;
  ds.examples.resize(n);
  for (Example& e : ds.examples) {
    e.query.resize(dim);
    e.values.resize(length * dim);
    for (double& x : e.query) x = rng.Uniform(-1.0, 1.0);
    for (double& x : e.values) x = rng.Uniform(-1.0, 1.0);
    double dot = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < length; ++i) mean += e.values[i * dim + k];
      dot += e.query[k] * (mean / static_cast<double>(length));
    }
    e.label = dot > 0.0 ? 1 : 0;
  }
  return ds;
}

Dataset GenTokenRetrieval(std::size_t n, std::size_t length,
                          std::size_t vocab_size, std::uint64_t seed,
                          std::size_t num_classes) {
  TokenRetrievalLayout layout{num_classes};
  if (n == 0 || length == 0 || num_classes < 2) {
    throw ContractError("token retrieval needs n, N >= 1 and >= 2 classes");
  }
  const std::size_t first_noise = static_cast<std::size_t>(layout.FirstNoise());
  if (vocab_size <= first_noise) {
    throw ContractError("token retrieval with " + std::to_string(num_classes) +
                        " classes needs vocab_size > " +
                        std::to_string(first_noise));
  }
  Rng rng = Rng::Derive(seed, "token_retrieval");
  Dataset ds;
  ds.kind = DatasetKind::kTokens;
  ds.num_classes = num_classes;
  ds.examples.resize(n);
  for (Example& e : ds.examples) {
    e.label = static_cast<int>(rng.UniformInt(num_classes));
    e.tokens.resize(length);
    for (int& t : e.tokens) {
      t = static_cast<int>(first_noise + rng.UniformInt(vocab_size - first_noise));
    }
    const std::size_t pos = rng.UniformInt(length);
    e.tokens[pos] = layout.ClassToken(e.label);
    if (length >= 2) {
      e.tokens[pos > 0 ? pos - 1 : pos + 1] = TokenRetrievalLayout::kKey;
    }
  }
  return ds;
}

// ---- Batching ---------------------------------------------------------------

std::vector<std::size_t> VisitOrder(std::size_t n, std::uint64_t seed,
                                    bool shuffle) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle && n > 1) {
    Rng rng = Rng::Derive(seed, "visit_order");
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.UniformInt(i + 1)]);
    }
  }
  return order;
}

Batch MakeBatch(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("empty batch");
  Batch b;
  b.batch_size = indices.size();
  for (std::size_t idx : indices) {
    if (idx >= dataset.size()) throw ContractError("sample index out of range");
    b.labels.push_back(dataset.examples[idx].label);
  }
  if (dataset.kind == DatasetKind::kVectors) {
    const std::size_t n = dataset.length, d = dataset.dim;
    b.length = n;
    b.mask = Mask::AllTrue({b.batch_size, n});
    b.query = Tensor::Zeros({b.batch_size, d});
    b.values = Tensor::Zeros({b.batch_size, n, d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const Example& e = dataset.examples[indices[r]];
      std::copy(e.query.begin(), e.query.end(), b.query.data().begin() + r * d);
      std::copy(e.values.begin(), e.values.end(),
                b.values.data().begin() + r * n * d);
    }
    return b;
  }
  for (std::size_t idx : indices) {
    b.length = std::max(b.length, dataset.examples[idx].tokens.size());
  }
  if (b.length == 0) throw DataError("batch holds only empty sequences");
  b.token_ids.assign(b.batch_size * b.length, Vocab::kPad);
  b.mask.shape = {b.batch_size, b.length};
  b.mask.keep.assign(b.batch_size * b.length, 0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::vector<int>& tokens = dataset.examples[indices[r]].tokens;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      b.token_ids[r * b.length + i] = tokens[i];
      b.mask.keep[r * b.length + i] = 1;
    }
  }
  return b;
}

std::vector<Batch> Batched(const Dataset& dataset, std::size_t batch_size,
                           std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  const std::vector<std::size_t> order = VisitOrder(dataset.size(), seed, shuffle);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.push_back(MakeBatch(
        dataset, std::span<const std::size_t>(order).subspan(start, end - start)));
  }
  return batches;
}

// ---- Text dumps -------------------------------------------------------------

void WriteSynthDataset(std::ostream& out, const Dataset& dataset,
                       const SynthHeader& header) {
  if (dataset.kind != DatasetKind::kVectors) {
    throw ContractError("synthetic vector dump needs a vector dataset");
  }
  out << "# qvi-synth v1 task=" << header.task << " n=" << dataset.size()
      << " N=" << dataset.length << " d=" << dataset.dim
      << " classes=" << dataset.num_classes << " seed=" << header.seed << "\n";
  for (const Example& e : dataset.examples) {
    out << e.label << '\t';
    for (std::size_t k = 0; k < e.query.size(); ++k) {
      out << (k ? " " : "") << FormatExact(e.query[k]);
    }
    out << '\t';
    for (std::size_t k = 0; k < e.values.size(); ++k) {
      out << (k ? " " : "") << FormatExact(e.values[k]);
    }
    out << '\n';
  }
}

namespace {

std::vector<double> ParseDoubles(std::string_view field, std::size_t expected,
                                 std::size_t line_no) {
  std::vector<double> out;
  for (std::string_view item : SplitWhitespace(field)) {
    double v = 0.0;
    if (!ParseNumber(item, v)) {
      throw ParseError("'" + std::string(item) + "' is not a number", line_no);
    }
    out.push_back(v);
  }
  if (out.size() != expected) {
    throw ParseError("expected " + std::to_string(expected) + " numbers, got " +
                         std::to_string(out.size()),
                     line_no);
  }
  return out;
}

std::map<std::string, std::string> ReadHeader(std::istream& in,
                                              std::string_view magic) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  StripCr(line);
  if (line.rfind(magic, 0) != 0) {
    throw ParseError("expected header starting with '" + std::string(magic) +
                         "'",
                     1);
  }
  return HeaderFields(std::string_view(line).substr(magic.size()));
}

void FillHeader(const std::map<std::string, std::string>& fields,
                SynthHeader* header) {
  if (!header) return;
  auto it = fields.find("task");
  header->task = it == fields.end() ? "" : it->second;
  header->seed = HeaderNumber(fields, "seed");
}

std::vector<std::string_view> SplitTabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

int ParseLabel(std::string_view s, std::size_t classes, std::size_t line_no) {
  int label = 0;
  if (!ParseNumber(s, label) || label < 0 ||
      static_cast<std::size_t>(label) >= classes) {
    throw ParseError("bad label '" + std::string(s) + "'", line_no);
  }
  return label;
}

}  // namespace

Dataset ReadSynthDataset(std::istream& in, SynthHeader* header) {
  const auto fields = ReadHeader(in, "# qvi-synth v1");
  Dataset ds;
  ds.kind = DatasetKind::kVectors;
  const std::size_t n = HeaderNumber(fields, "n");
  ds.length = HeaderNumber(fields, "N");
  ds.dim = HeaderNumber(fields, "d");
  ds.num_classes = HeaderNumber(fields, "classes");
  FillHeader(fields, header);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    StripCr(line);
    if (line.empty()) continue;
    const auto parts = SplitTabs(line);
    if (parts.size() != 3) {
      throw ParseError("expected 3 tab-separated fields", line_no);
    }
    Example e;
    e.label = ParseLabel(parts[0], ds.num_classes, line_no);
    e.query = ParseDoubles(parts[1], ds.dim, line_no);
    e.values = ParseDoubles(parts[2], ds.length * ds.dim, line_no);
    ds.examples.push_back(std::move(e));
  }
  if (ds.size() != n) {
    throw ParseError("header announces " + std::to_string(n) +
                     " samples, file holds " + std::to_string(ds.size()));
  }
  return ds;
}

void WriteTokenDataset(std::ostream& out, const Dataset& dataset,
                       std::size_t vocab_size, const SynthHeader& header) {
  if (dataset.kind != DatasetKind::kTokens) {
    throw ContractError("token dump needs a token dataset");
  }
  out << "# qvi-tokens v1 task=" << header.task << " n=" << dataset.size()
      << " vocab=" << vocab_size << " classes=" << dataset.num_classes
      << " seed=" << header.seed << "\n";
  for (const Example& e : dataset.examples) {
    out << e.label << '\t';
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
      out << (i ? " " : "") << e.tokens[i];
    }
    out << '\n';
  }
}

Dataset ReadTokenDataset(std::istream& in, SynthHeader* header) {
  const auto fields = ReadHeader(in, "# qvi-tokens v1");
  Dataset ds;
  ds.kind = DatasetKind::kTokens;
  const std::size_t n = HeaderNumber(fields, "n");
  const std::size_t vocab = HeaderNumber(fields, "vocab");
  ds.num_classes = HeaderNumber(fields, "classes");
  FillHeader(fields, header);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    StripCr(line);
    if (line.empty()) continue;
    const auto parts = SplitTabs(line);
    if (parts.size() != 2) {
      throw ParseError("expected 2 tab-separated fields", line_no);
    }
    Example e;
    e.label = ParseLabel(parts[0], ds.num_classes, line_no);
    for (std::string_view item : SplitWhitespace(parts[1])) {
      int id = 0;
      if (!ParseNumber(item, id) || id < 0 ||
          static_cast<std::size_t>(id) >= vocab) {
        throw ParseError("bad token id '" + std::string(item) + "'", line_no);
      }
      e.tokens.push_back(id);
    }
    if (e.tokens.empty()) throw ParseError("sample has no tokens", line_no);
    ds.examples.push_back(std::move(e));
  }
  if (ds.size() != n) {
    throw ParseError("header announces " + std::to_string(n) +
                     " samples, file holds " + std::to_string(ds.size()));
  }
  return ds;
}

}  // namespace qvi
