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

// Datasets, vocabularies and batching.
//
// Two dataset kinds exist. Token datasets hold integer id sequences of
// varying length. Vector datasets hold, per sample, a query vector and a
// fixed number of value vectors; they feed additive attention directly.

#ifndef QVI_DATA_H_
#define QVI_DATA_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qvi/tensor.h"

namespace qvi {

enum class DatasetKind { kTokens, kVectors };

struct Example {
  int label = 0;
  std::vector<int> tokens;     // token datasets
  std::vector<double> query;   // vector datasets: [d]
  std::vector<double> values;  // vector datasets: [N * d], row-major
};

struct Dataset {
  DatasetKind kind = DatasetKind::kTokens;
  std::size_t num_classes = 0;
  std::size_t length = 0;  // vector datasets: N
  std::size_t dim = 0;     // vector datasets: d
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  // Checks labels, lengths and vector sizes; throws DataError.
  void Validate() const;
};

struct Batch {
  std::size_t batch_size = 0;
  std::size_t length = 0;      // N, the longest sequence in the batch
  std::vector<int> token_ids;  // [B * N], PAD-filled; token batches only
  Mask mask;                   // [B, N]
  std::vector<int> labels;     // [B]
  Tensor query;                // [B, d]; vector batches only
  Tensor values;               // [B, N, d]; vector batches only
};

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  // PAD and UNK only.
  Vocab();

  // Keeps tokens seen at least `min_freq` times, ordered by descending
  // count then bytewise token.
  static Vocab Build(const std::vector<std::vector<std::string>>& documents,
                     std::size_t min_freq);
  // One token per line in id order, starting with the two reserved ones.
  static Vocab FromTokens(std::vector<std::string> tokens);

  int Id(std::string_view token) const;  // UNK when absent
  const std::string& Token(int id) const;
  bool Contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> ids_;
};

// Lowercases ASCII letters and splits on whitespace.
std::vector<std::string> Tokenize(std::string_view text);

struct CorpusOptions {
  std::size_t min_freq = 2;
  std::size_t max_len = 128;
  // 0 derives the class count from the largest label seen.
  std::size_t num_classes = 0;
};

struct Corpus {
  Dataset dataset;
  Vocab vocab;
};

// Reads "<label>\t<text>" lines. A null `vocab` builds one from this file;
// pass the training vocabulary when loading validation or test splits.
// Malformed lines raise ParseError with the 1-based line number; a line
// with no tokens raises DataError.
Corpus LoadTsvCorpus(const std::string& path, const Vocab* vocab,
                     const CorpusOptions& options = {});
Corpus ParseTsvCorpus(std::istream& in, const Vocab* vocab,
                      const CorpusOptions& options = {});

// q, v_i ~ U(-1, 1)^d; label = [<q, mean_i v_i> > 0].
Dataset GenGatedRetrieval(std::size_t n, std::size_t length, std::size_t dim,
                          std::uint64_t seed);

// Token ids used by the token retrieval task.
struct TokenRetrievalLayout {
  static constexpr int kKey = 2;
  static constexpr int kFirstClass = 3;
  std::size_t num_classes = 4;

  int ClassToken(int label) const { return kFirstClass + label; }
  int FirstNoise() const { return kFirstClass + static_cast<int>(num_classes); }
};

// Each sequence holds exactly one class token (the partner) next to a KEY
// marker; all other positions are noise tokens. The label is the partner's
// class. vocab_size must leave at least one noise token.
Dataset GenTokenRetrieval(std::size_t n, std::size_t length,
                          std::size_t vocab_size, std::uint64_t seed,
                          std::size_t num_classes = 4);

// Sample indices in visiting order: identity, or a Fisher-Yates shuffle
// driven by `seed`.
std::vector<std::size_t> VisitOrder(std::size_t n, std::uint64_t seed,
                                    bool shuffle);

// Collates `indices` (in order) into one batch, padding to the longest.
Batch MakeBatch(const Dataset& dataset, std::span<const std::size_t> indices);

// Splits the dataset into batches of at most `batch_size`.
std::vector<Batch> Batched(const Dataset& dataset, std::size_t batch_size,
                           std::uint64_t seed, bool shuffle);

// Synthetic vector dataset text dump. First line:
//   # qvi-synth v1 task=<name> n=<n> N=<N> d=<d> classes=<C> seed=<seed>
// then one sample per line: label, TAB, d query values separated by spaces,
// TAB, N*d value entries separated by spaces, all in the shortest decimal
// form that reads back exactly.
struct SynthHeader {
  std::string task;
  std::uint64_t seed = 0;
};
void WriteSynthDataset(std::ostream& out, const Dataset& dataset,
                       const SynthHeader& header);
Dataset ReadSynthDataset(std::istream& in, SynthHeader* header = nullptr);

// Token datasets: label, TAB, space-separated ids. Header line
//   # qvi-tokens v1 task=<name> n=<n> vocab=<V> classes=<C> seed=<seed>
void WriteTokenDataset(std::ostream& out, const Dataset& dataset,
                       std::size_t vocab_size, const SynthHeader& header);
Dataset ReadTokenDataset(std::istream& in, SynthHeader* header = nullptr);

}  // namespace qvi

#endif  // QVI_DATA_H_
