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

// Run configuration files.
//
// INI-style text: "[section]" headers, "key = value" lines, '#' or ';'
// comments. Sections: model, attention, train, data, ablation, output.
// Unknown sections or keys, duplicate keys and malformed values raise
// ConfigError naming "section.key". See docs/config.md for the schema.

#ifndef QVI_CONFIG_H_
#define QVI_CONFIG_H_

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qvi/data.h"
#include "qvi/model.h"
#include "qvi/train.h"

namespace qvi {

enum class DataSource { kGatedRetrieval, kTokenRetrieval, kTsv, kDump };
std::string_view ToString(DataSource v);

struct DataSpec {
  DataSource source = DataSource::kTokenRetrieval;
  std::string train_path;  // tsv and dump sources
  std::string val_path;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t length = 16;      // sequence length N
  std::size_t dim = 16;         // gated retrieval vector size d
  std::size_t vocab_size = 50;  // token retrieval
  std::size_t num_classes = 4;  // token retrieval
  std::size_t min_freq = 2;     // tsv vocabulary threshold
  // Generator seed; defaults to the training seed.
  std::optional<std::uint64_t> seed;
};

struct AblationSettings {
  std::vector<ValueFn> variants = {ValueFn::kStandard, ValueFn::kQvi,
                                   ValueFn::kValuesOnly,
                                   ValueFn::kInteractionsOnly,
                                   ValueFn::kSimpleSum};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t threads = 1;
};

struct OutputSpec {
  std::string dir = "runs";
  std::string name;  // empty: derived from command, config hash and seed
};

struct RunSpec {
  ModelConfig model;
  TrainConfig train;
  DataSpec data;
  AblationSettings ablation;
  OutputSpec output;
  // "section.key" of every value set by the file or an override.
  std::set<std::string> explicit_keys;

  std::uint64_t data_seed() const { return data.seed.value_or(train.seed); }
};

// Parses config text, then applies "section.key=value" overrides in order.
RunSpec ParseRunSpec(std::string_view text,
                     const std::vector<std::string>& overrides = {});
RunSpec LoadRunSpec(const std::string& path,
                    const std::vector<std::string>& overrides = {});

// Sets one "section.key" to `value`; throws ConfigError.
void SetRunSpecEntry(RunSpec& spec, const std::string& key,
                     const std::string& value);

// Every effective setting, one section per block, in a fixed order. Parsing
// the result yields the same RunSpec.
std::string CanonicalConfig(const RunSpec& spec);
// FNV-1a 64 of CanonicalConfig, as 16 hex digits.
std::string ConfigHash(const RunSpec& spec);

// Rejects settings that only make sense in tests (gate_override) and
// cross-field inconsistencies. Throws ConfigError.
void ValidateForTraining(const RunSpec& spec);

struct LoadedData {
  Dataset train;
  Dataset val;
  std::optional<Vocab> vocab;  // tsv source only
};

// Builds or reads the datasets and fills in the model fields the data
// determines (input mode and embed_dim for vectors, vocab_size,
// num_classes). Throws ConfigError when an explicit setting disagrees.
LoadedData PrepareData(RunSpec& spec);

}  // namespace qvi

#endif  // QVI_CONFIG_H_
