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

#include "qvi/config.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qvi/error.h"
#include "qvi/rng.h"
#include "qvi/text.h"

namespace qvi {
namespace {

std::size_t AsSize(const std::string& key, const std::string& value) {
  auto v = ParseUint(Trim(value));
  if (!v) throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(*v);
}

std::uint64_t AsU64(const std::string& key, const std::string& value) {
  auto v = ParseUint(Trim(value));
  if (!v) throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
  return *v;
}

double AsDouble(const std::string& key, const std::string& value) {
  auto v = ParseDouble(Trim(value));
  if (!v) throw ConfigError(key, "expected a number, got '" + value + "'");
  return *v;
}

std::vector<std::string> SplitList(std::string_view value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t comma = value.find(',', start);
    std::string_view item = Trim(value.substr(
        start, comma == std::string_view::npos ? comma : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

DataSource ParseDataSource(const std::string& key, std::string_view s) {
  if (s == "gated_retrieval") return DataSource::kGatedRetrieval;
  if (s == "token_retrieval") return DataSource::kTokenRetrieval;
  if (s == "tsv") return DataSource::kTsv;
  if (s == "dump") return DataSource::kDump;
  throw ConfigError(key, "unknown source '" + std::string(s) +
                             "' (gated_retrieval, token_retrieval, tsv, dump)");
}

template <typename T>
std::string Join(const std::vector<T>& items, auto to_string) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += (i ? "," : "") + std::string(to_string(items[i]));
  }
  return out;
}

void SetTrain(TrainConfig& t, const std::string& key, const std::string& value) {
  const std::string k = key.substr(6);
  if (k == "optimizer") {
    try {
      t.optimizer = ParseOptimizerKind(Trim(value));
    } catch (const ContractError& e) {
      throw ConfigError(key, e.what());
    }
  } else if (k == "lr") {
    t.lr = AsDouble(key, value);
  } else if (k == "beta1") {
    t.beta1 = AsDouble(key, value);
  } else if (k == "beta2") {
    t.beta2 = AsDouble(key, value);
  } else if (k == "eps") {
    t.eps = AsDouble(key, value);
  } else if (k == "batch_size") {
    t.batch_size = AsSize(key, value);
  } else if (k == "epochs") {
    t.epochs = AsSize(key, value);
  } else if (k == "seed") {
    t.seed = AsU64(key, value);
  } else if (k == "early_stop_patience") {
    t.early_stop_patience = AsSize(key, value);
  } else if (k == "eval_every") {
    t.eval_every = AsSize(key, value);
  } else if (k == "clip_norm") {
    t.clip_norm = AsDouble(key, value);
  } else {
    throw ConfigError(key, "unknown key");
  }
}

void SetData(DataSpec& d, const std::string& key, const std::string& value) {
  const std::string k = key.substr(5);
  if (k == "source") {
    d.source = ParseDataSource(key, Trim(value));
  } else if (k == "train_path") {
    d.train_path = std::string(Trim(value));
  } else if (k == "val_path") {
    d.val_path = std::string(Trim(value));
  } else if (k == "n_train") {
    d.n_train = AsSize(key, value);
  } else if (k == "n_val") {
    d.n_val = AsSize(key, value);
  } else if (k == "length") {
    d.length = AsSize(key, value);
  } else if (k == "dim") {
    d.dim = AsSize(key, value);
  } else if (k == "vocab_size") {
    d.vocab_size = AsSize(key, value);
  } else if (k == "num_classes") {
    d.num_classes = AsSize(key, value);
  } else if (k == "min_freq") {
    d.min_freq = AsSize(key, value);
  } else if (k == "seed") {
    d.seed = AsU64(key, value);
  } else {
    throw ConfigError(key, "unknown key");
  }
}

void SetAblation(AblationSettings& a, const std::string& key,
                 const std::string& value) {
  const std::string k = key.substr(9);
  if (k == "variants") {
    a.variants.clear();
    for (const std::string& item : SplitList(value)) {
      try {
        a.variants.push_back(ParseValueFn(item));
      } catch (const ContractError& e) {
        throw ConfigError(key, e.what());
      }
    }
    if (a.variants.empty()) throw ConfigError(key, "needs at least one variant");
  } else if (k == "seeds") {
    a.seeds.clear();
    for (const std::string& item : SplitList(value)) a.seeds.push_back(AsU64(key, item));
    if (a.seeds.empty()) throw ConfigError(key, "needs at least one seed");
  } else if (k == "threads") {
    a.threads = AsSize(key, value);
    if (a.threads == 0) throw ConfigError(key, "must be at least 1");
  } else {
    throw ConfigError(key, "unknown key");
  }
}

void SetOutput(OutputSpec& o, const std::string& key, const std::string& value) {
  const std::string k = key.substr(7);
  if (k == "dir") {
    o.dir = std::string(Trim(value));
  } else if (k == "name") {
    o.name = std::string(Trim(value));
    if (o.name.find('/') != std::string::npos) {
      throw ConfigError(key, "must not contain '/'");
    }
  } else {
    throw ConfigError(key, "unknown key");
  }
}

bool StartsWith(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace

std::string_view ToString(DataSource v) {
  switch (v) {
    case DataSource::kGatedRetrieval:
      return "gated_retrieval";
    case DataSource::kTokenRetrieval:
      return "token_retrieval";
    case DataSource::kTsv:
      return "tsv";
    case DataSource::kDump:
      return "dump";
  }
  return "?";
}

void SetRunSpecEntry(RunSpec& spec, const std::string& key,
                     const std::string& value) {
  if (StartsWith(key, "model.") || StartsWith(key, "attention.")) {
    SetModelConfigEntry(spec.model, key, value);
  } else if (StartsWith(key, "train.")) {
    SetTrain(spec.train, key, value);
  } else if (StartsWith(key, "data.")) {
    SetData(spec.data, key, value);
  } else if (StartsWith(key, "ablation.")) {
    SetAblation(spec.ablation, key, value);
  } else if (StartsWith(key, "output.")) {
    SetOutput(spec.output, key, value);
  } else {
    throw ConfigError(key, "unknown section");
  }
  spec.explicit_keys.insert(key);
}

RunSpec ParseRunSpec(std::string_view text,
                     const std::vector<std::string>& overrides) {
  RunSpec spec;
  std::string section;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = Trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where, "unterminated section header");
      section = std::string(Trim(line.substr(1, line.size() - 2)));
      static const std::set<std::string> kSections = {
          "model", "attention", "train", "data", "ablation", "output"};
      if (!kSections.count(section)) throw ConfigError(section, "unknown section");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where, "expected 'key = value'");
    if (section.empty()) throw ConfigError(where, "key outside of any section");
    const std::string key = section + "." + std::string(Trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw ConfigError(key, "set twice");
    SetRunSpecEntry(spec, key, std::string(Trim(line.substr(eq + 1))));
  }
  for (const std::string& o : overrides) {
    const std::size_t eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(o, "override must look like section.key=value");
    }
    SetRunSpecEntry(spec, std::string(Trim(std::string_view(o).substr(0, eq))),
                    std::string(Trim(std::string_view(o).substr(eq + 1))));
  }
  spec.train.Validate();
  return spec;
}

RunSpec LoadRunSpec(const std::string& path,
                    const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseRunSpec(ss.str(), overrides);
}

std::string CanonicalConfig(const RunSpec& s) {
  std::ostringstream out;
  auto entries = ModelConfigEntries(s.model);
  out << "[model]\n";
  for (const auto& [k, v] : entries)
    if (StartsWith(k, "model.")) out << k.substr(6) << " = " << v << "\n";
  out << "\n[attention]\n";
  for (const auto& [k, v] : entries)
    if (StartsWith(k, "attention.")) out << k.substr(10) << " = " << v << "\n";
  const TrainConfig& t = s.train;
  out << "\n[train]\n"
      << "optimizer = " << ToString(t.optimizer) << "\n"
      << "lr = " << FormatExact(t.lr) << "\n"
      << "beta1 = " << FormatExact(t.beta1) << "\n"
      << "beta2 = " << FormatExact(t.beta2) << "\n"
      << "eps = " << FormatExact(t.eps) << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "epochs = " << t.epochs << "\n"
      << "seed = " << t.seed << "\n"
      << "early_stop_patience = " << t.early_stop_patience << "\n"
      << "eval_every = " << t.eval_every << "\n"
      << "clip_norm = " << FormatExact(t.clip_norm) << "\n";
  const DataSpec& d = s.data;
  out << "\n[data]\n"
      << "source = " << ToString(d.source) << "\n";
  if (!d.train_path.empty()) out << "train_path = " << d.train_path << "\n";
  if (!d.val_path.empty()) out << "val_path = " << d.val_path << "\n";
  out << "n_train = " << d.n_train << "\n"
      << "n_val = " << d.n_val << "\n"
      << "length = " << d.length << "\n"
      << "dim = " << d.dim << "\n"
      << "vocab_size = " << d.vocab_size << "\n"
      << "num_classes = " << d.num_classes << "\n"
      << "min_freq = " << d.min_freq << "\n";
  if (d.seed) out << "seed = " << *d.seed << "\n";
  out << "\n[ablation]\n"
      << "variants = " << Join(s.ablation.variants, [](ValueFn v) { return ToString(v); })
      << "\n"
      << "seeds = "
      << Join(s.ablation.seeds, [](std::uint64_t v) { return std::to_string(v); })
      << "\n"
      << "threads = " << s.ablation.threads << "\n";
  out << "\n[output]\n"
      << "dir = " << s.output.dir << "\n";
  if (!s.output.name.empty()) out << "name = " << s.output.name << "\n";
  return out.str();
}

std::string ConfigHash(const RunSpec& spec) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a64(CanonicalConfig(spec))));
  return buf;
}

void ValidateForTraining(const RunSpec& spec) {
  if (spec.model.attention.gate_override) {
    throw ConfigError("attention.gate_override",
                      "is a testing hook and cannot be used for training");
  }
  spec.train.Validate();
  const DataSpec& d = spec.data;
  if (d.source == DataSource::kTsv || d.source == DataSource::kDump) {
    if (d.train_path.empty()) throw ConfigError("data.train_path", "required for this source");
    if (d.val_path.empty()) throw ConfigError("data.val_path", "required for this source");
  } else {
    if (d.n_train == 0) throw ConfigError("data.n_train", "must be positive");
    if (d.n_val == 0) throw ConfigError("data.n_val", "must be positive");
    if (d.length == 0) throw ConfigError("data.length", "must be positive");
  }
}

namespace {

// Forces `field` to `value`, complaining if the user set it otherwise.
template <typename T>
void Derive(RunSpec& spec, const std::string& key, T& field, T value,
            const std::string& why) {
  if (spec.explicit_keys.count(key) && field != value) {
    throw ConfigError(key, "conflicts with the data (" + why + ")");
  }
  field = value;
}

void FitVectors(RunSpec& spec, const Dataset& train, const std::string& why) {
  ModelConfig& m = spec.model;
  if (m.kind != ModelKind::kAdditivePool) {
    throw ConfigError("model.kind", "vector data needs additive_pool (" + why + ")");
  }
  Derive(spec, "model.input", m.input, InputMode::kVectors, why);
  Derive(spec, "model.embed_dim", m.embed_dim, train.dim, why);
  Derive(spec, "model.num_classes", m.num_classes, train.num_classes, why);
}

void FitTokens(RunSpec& spec, std::size_t vocab, std::size_t classes,
               const std::vector<const Dataset*>& sets, const std::string& why) {
  ModelConfig& m = spec.model;
  Derive(spec, "model.input", m.input, InputMode::kTokens, why);
  if (spec.explicit_keys.count("model.vocab_size")) {
    if (m.vocab_size < vocab) {
      throw ConfigError("model.vocab_size", "smaller than the data needs (" +
                                                std::to_string(vocab) + ")");
    }
  } else {
    m.vocab_size = vocab;
  }
  Derive(spec, "model.num_classes", m.num_classes, classes, why);
  if (m.kind == ModelKind::kTransformer) {
    for (const Dataset* ds : sets)
      for (const Example& e : ds->examples)
        if (e.tokens.size() > m.max_len) {
          throw ConfigError("model.max_len",
                            "shorter than a sequence of length " +
                                std::to_string(e.tokens.size()));
        }
  }
}

Dataset ReadDump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  std::string first;
  std::getline(in, first);
  in.clear();
  in.seekg(0);
  if (StartsWith(first, "# qvi-synth")) return ReadSynthDataset(in);
  if (StartsWith(first, "# qvi-tokens")) return ReadTokenDataset(in);
  throw ParseError("'" + path + "' is not a qvi dataset dump", 1);
}

std::size_t MaxToken(const Dataset& ds) {
  int mx = 0;
  for (const Example& e : ds.examples)
    for (int t : e.tokens) mx = std::max(mx, t);
  return static_cast<std::size_t>(mx) + 1;
}

}  // namespace

LoadedData PrepareData(RunSpec& spec) {
  ValidateForTraining(spec);
  DataSpec& d = spec.data;
  LoadedData out;
  const std::uint64_t train_seed = Rng::Derive(spec.data_seed(), "train").NextU64();
  const std::uint64_t val_seed = Rng::Derive(spec.data_seed(), "val").NextU64();
  switch (d.source) {
    case DataSource::kGatedRetrieval:
      out.train = GenGatedRetrieval(d.n_train, d.length, d.dim, train_seed);
      out.val = GenGatedRetrieval(d.n_val, d.length, d.dim, val_seed);
      FitVectors(spec, out.train, "data.source = gated_retrieval");
      break;
    case DataSource::kTokenRetrieval:
      try {
        out.train = GenTokenRetrieval(d.n_train, d.length, d.vocab_size, train_seed,
                                      d.num_classes);
        out.val = GenTokenRetrieval(d.n_val, d.length, d.vocab_size, val_seed,
                                    d.num_classes);
      } catch (const ContractError& e) {
        throw ConfigError("data.vocab_size", e.what());
      }
      FitTokens(spec, d.vocab_size, d.num_classes, {&out.train, &out.val},
                "data.source = token_retrieval");
      break;
    case DataSource::kTsv: {
      CorpusOptions opts;
      opts.min_freq = d.min_freq;
      opts.max_len = spec.model.max_len;
      if (spec.explicit_keys.count("model.num_classes")) {
        opts.num_classes = spec.model.num_classes;
      }
      Corpus train = LoadTsvCorpus(d.train_path, nullptr, opts);
      opts.num_classes = train.dataset.num_classes;
      Corpus val = LoadTsvCorpus(d.val_path, &train.vocab, opts);
      out.train = std::move(train.dataset);
      out.val = std::move(val.dataset);
      out.vocab = std::move(train.vocab);
      FitTokens(spec, out.vocab->size(), out.train.num_classes,
                {&out.train, &out.val}, "vocabulary built from data.train_path");
      break;
    }
    case DataSource::kDump: {
      out.train = ReadDump(d.train_path);
      out.val = ReadDump(d.val_path);
      if (out.train.kind != out.val.kind) {
        throw ConfigError("data.val_path", "holds a different dataset kind than data.train_path");
      }
      const std::size_t classes = std::max(out.train.num_classes, out.val.num_classes);
      out.train.num_classes = out.val.num_classes = classes;
      if (out.train.kind == DatasetKind::kVectors) {
        if (out.train.dim != out.val.dim || out.train.length != out.val.length) {
          throw ConfigError("data.val_path", "vector sizes differ from data.train_path");
        }
        FitVectors(spec, out.train, "vector dump");
      } else {
        FitTokens(spec, std::max(MaxToken(out.train), MaxToken(out.val)), classes,
                  {&out.train, &out.val}, "token dump");
      }
      break;
    }
  }
  spec.model.Validate();
  return out;
}

}  // namespace qvi
