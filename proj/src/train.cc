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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include "qvi/error.h"
#include "qvi/rng.h"
#include "qvi/text.h"

namespace qvi {
namespace {

void Check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

std::uint64_t EpochSeed(std::uint64_t seed, std::size_t epoch) {
  return Rng::Derive(seed, "epoch" + std::to_string(epoch)).NextU64();
}

std::vector<NamedParam> Snapshot(const ParamStore& store) {
  std::vector<NamedParam> out;
  for (const NamedParam& p : store.params()) out.push_back({p.name, p.tensor.Clone()});
  return out;
}

void Restore(ParamStore& store, const std::vector<NamedParam>& saved) {
  const auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor dst = params[i].tensor;
    std::copy(saved[i].tensor.data().begin(), saved[i].tensor.data().end(),
              dst.data().begin());
  }
}

void Log(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

}  // namespace

std::string_view ToString(OptimizerKind v) {
  return v == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind ParseOptimizerKind(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ContractError("unknown optimizer '" + std::string(s) + "' (adam, sgd)");
}

void TrainConfig::Validate() const {
  Check(lr > 0.0 && std::isfinite(lr), "train.lr", "must be positive");
  Check(epochs >= 1, "train.epochs", "must be at least 1");
  Check(batch_size >= 1, "train.batch_size", "must be at least 1");
  Check(eval_every >= 1, "train.eval_every", "must be at least 1");
  Check(beta1 >= 0.0 && beta1 < 1.0, "train.beta1", "must lie in [0, 1)");
  Check(beta2 >= 0.0 && beta2 < 1.0, "train.beta2", "must lie in [0, 1)");
  Check(eps > 0.0, "train.eps", "must be positive");
  Check(clip_norm >= 0.0, "train.clip_norm", "must be non-negative");
}

Tensor CrossEntropy(Graph& g, const Tensor& logits, std::span<const int> labels) {
  return g.SoftmaxCrossEntropy(logits, labels);
}

double ClipGradNorm(const std::vector<NamedParam>& params, double max_norm) {
  double sq = 0.0;
  for (const NamedParam& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const NamedParam& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      for (double& g : t.grad()) g *= scale;
    }
  }
  return norm;
}

// ---- Optimizer ------------------------------------------------------------

Optimizer::Optimizer(const TrainConfig& config) : config_(config) {
  config_.Validate();
}

void Optimizer::EnsureSlots(const std::vector<NamedParam>& params) {
  if (slots_.empty()) {
    for (const NamedParam& p : params) {
      Slot s{p.name, {}, {}};
      if (config_.optimizer == OptimizerKind::kAdam) {
        s.m.assign(p.tensor.size(), 0.0);
        s.v.assign(p.tensor.size(), 0.0);
      }
      slots_.push_back(std::move(s));
    }
    return;
  }
  if (slots_.size() != params.size()) {
    throw StateError("optimizer state tracks " + std::to_string(slots_.size()) +
                     " parameters, step received " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (slots_[i].name != params[i].name) {
      throw StateError("optimizer slot " + std::to_string(i) + " belongs to " +
                       slots_[i].name + ", got " + params[i].name);
    }
  }
}

void Optimizer::Step(const std::vector<NamedParam>& params) {
  EnsureSlots(params);
  ++step_;
  const double lr = config_.lr;
  if (config_.optimizer == OptimizerKind::kSgd) {
    for (const NamedParam& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      auto x = t.data();
      auto g = std::as_const(t).grad();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * g[i];
    }
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto x = t.data();
    const bool has = t.has_grad();
    auto& m = slots_[k].m;
    auto& v = slots_[k].v;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = has ? std::as_const(t).grad()[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Optimizer::Save(std::ostream& out) const {
  out << "QVI-OPTIMIZER 1\n"
      << "kind " << ToString(config_.optimizer) << "\n"
      << "step " << step_ << "\n"
      << "slots " << slots_.size() << "\n";
  for (const Slot& s : slots_) {
    out << "[slot] " << s.name << " " << s.m.size() << "\n";
    for (const auto* vec : {&s.m, &s.v}) {
      for (std::size_t i = 0; i < vec->size(); ++i) {
        out << (i ? " " : "") << FormatHex((*vec)[i]);
      }
      out << "\n";
    }
  }
}

void Optimizer::Load(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) throw ParseError("truncated optimizer state", line_no + 1);
    ++line_no;
    return SplitWhitespace(line);
  };
  auto f = next();
  if (f.size() != 2 || f[0] != "QVI-OPTIMIZER" || f[1] != "1") {
    throw ParseError("not an optimizer state file", line_no);
  }
  f = next();
  if (f.size() != 2 || f[0] != "kind" || f[1] != ToString(config_.optimizer)) {
    throw ParseError("optimizer kind mismatch", line_no);
  }
  f = next();
  auto step = f.size() == 2 && f[0] == "step" ? ParseUint(f[1]) : std::nullopt;
  if (!step) throw ParseError("expected 'step <n>'", line_no);
  f = next();
  auto count = f.size() == 2 && f[0] == "slots" ? ParseUint(f[1]) : std::nullopt;
  if (!count) throw ParseError("expected 'slots <n>'", line_no);
  std::vector<Slot> slots;
  for (std::uint64_t k = 0; k < *count; ++k) {
    f = next();
    auto size = f.size() == 3 && f[0] == "[slot]" ? ParseUint(f[2]) : std::nullopt;
    if (!size) throw ParseError("expected '[slot] <name> <size>'", line_no);
    Slot s{std::string(f[1]), {}, {}};
    for (auto* vec : {&s.m, &s.v}) {
      f = next();
      if (f.size() != *size) throw ParseError("moment size mismatch", line_no);
      for (std::string_view item : f) {
        auto v = ParseDouble(item);
        if (!v) throw ParseError("bad number '" + std::string(item) + "'", line_no);
        vec->push_back(*v);
      }
    }
    slots.push_back(std::move(s));
  }
  if (!slots_.empty()) {
    if (slots.size() != slots_.size()) throw ParseError("slot count mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].name != slots_[i].name || slots[i].m.size() != slots_[i].m.size()) {
        throw ParseError("slot " + slots[i].name + " does not match " + slots_[i].name);
      }
    }
  }
  step_ = *step;
  slots_ = std::move(slots);
}

// ---- Metrics --------------------------------------------------------------

Metrics ComputeMetrics(std::span<const int> predictions,
                       std::span<const int> labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("metrics: " + std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(labels.size()) +
                         " labels");
  }
  if (labels.empty()) throw DataError("metrics over an empty dataset");
  std::vector<std::size_t> tp(num_classes), fp(num_classes), fn(num_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if (p < 0 || y < 0 || static_cast<std::size_t>(p) >= num_classes ||
        static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("class index outside [0, " + std::to_string(num_classes) + ")");
    }
    if (p == y) {
      ++correct;
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  Metrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  double f1_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++counted;
  }
  m.macro_f1 = counted ? f1_sum / static_cast<double>(counted) : 0.0;
  return m;
}

Metrics Evaluate(const Model& model, const Dataset& dataset, std::size_t batch_size) {
  std::vector<int> predictions, labels;
  double loss_sum = 0.0;
  for (const Batch& b : Batched(dataset, batch_size, 0, false)) {
    Graph g(false);
    Tensor logits = model.Forward(g, b);
    loss_sum += CrossEntropy(g, logits, b.labels).item() *
                static_cast<double>(b.batch_size);
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < b.batch_size; ++r) {
      const double* row = logits.data().data() + r * classes;
      predictions.push_back(static_cast<int>(std::max_element(row, row + classes) - row));
    }
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
  }
  Metrics m = ComputeMetrics(predictions, labels, model.config().num_classes);
  m.loss = loss_sum / static_cast<double>(dataset.size());
  return m;
}

// ---- Fit ------------------------------------------------------------------

RunResult Fit(Model& model, const Dataset& train, const Dataset& val,
              const TrainConfig& config, const LogFn& log) {
  config.Validate();
  if (train.size() == 0) throw DataError("empty training set");
  if (val.size() == 0) throw DataError("empty validation set");
  const auto start = std::chrono::steady_clock::now();
  ParamStore& store = model.params();
  const auto& params = store.params();
  Optimizer opt(config);
  Rng dropout_rng = Rng::Derive(config.seed, "dropout");

  RunResult result;
  result.seed = config.seed;
  result.best_params = Snapshot(store);
  bool have_best = false;
  std::size_t since_best = 0;
  EpochRecord last;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const Batch& b : Batched(train, config.batch_size,
                                  EpochSeed(config.seed, epoch), true)) {
      store.ZeroGrad();
      Graph g;
      Tensor loss = CrossEntropy(g, model.Forward(g, b, &dropout_rng), b.labels);
      if (!std::isfinite(loss.item())) {
        std::optional<std::string> where;
        for (const NamedParam& p : params) {
          if (!p.tensor.AllFinite()) {
            where = "parameter " + p.name;
            break;
          }
        }
        if (!where) where = g.FirstNonFinite();
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) +
                             "; first non-finite tensor: " +
                             where.value_or("the loss itself"));
      }
      g.Backward(loss);
      for (const NamedParam& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double v : p.tensor.grad()) {
          if (!std::isfinite(v)) {
            throw NonFiniteError("non-finite gradient for parameter " + p.name +
                                 " at epoch " + std::to_string(epoch));
          }
        }
      }
      const double norm = ClipGradNorm(params, config.clip_norm);
      if (config.clip_norm > 0.0 && norm > config.clip_norm) {
        ++result.clip_events;
        Log(log, "clip: epoch " + std::to_string(epoch) + " step " +
                     std::to_string(opt.step() + 1) + " grad norm " +
                     FormatExact(norm) + " > " + FormatExact(config.clip_norm));
      }
      opt.Step(params);
      for (const NamedParam& p : params) {
        if (!p.tensor.AllFinite()) {
          throw NonFiniteError("parameter " + p.name +
                               " became non-finite at epoch " + std::to_string(epoch));
        }
      }
      loss_sum += loss.item() * static_cast<double>(b.batch_size);
    }

    EpochRecord rec = last;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train.size());
    rec.evaluated = epoch % config.eval_every == 0 || epoch == config.epochs;
    if (rec.evaluated) {
      const Metrics m = Evaluate(model, val);
      rec.accuracy = m.accuracy;
      rec.macro_f1 = m.macro_f1;
      if (!have_best || m.accuracy > result.best_accuracy) {
        have_best = true;
        result.best_epoch = epoch;
        result.best_accuracy = m.accuracy;
        result.best_macro_f1 = m.macro_f1;
        result.best_params = Snapshot(store);
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    result.epochs.push_back(rec);
    last = rec;
    Log(log, "epoch " + std::to_string(epoch) + " loss " + FormatExact(rec.loss) +
                 (rec.evaluated ? " val_acc " + FormatExact(rec.accuracy) +
                                      " val_macro_f1 " + FormatExact(rec.macro_f1)
                                : std::string()));
    if (config.early_stop_patience > 0 && since_best >= config.early_stop_patience) {
      result.early_stopped = true;
      Log(log, "early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  Restore(store, result.best_params);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---- Ablation -------------------------------------------------------------

AblationResult RunAblation(const AblationSpec& spec, const Dataset& train,
                           const Dataset& val, const LogFn& log) {
  if (spec.variants.empty()) throw ContractError("ablation needs at least one variant");
  if (spec.seeds.empty()) throw ContractError("ablation needs at least one seed");
  spec.train.Validate();
  AblationResult out;
  for (ValueFn v : spec.variants) {
    for (std::uint64_t s : spec.seeds) out.runs.push_back({v, s, {}});
  }
  std::mutex log_mu;
  LogFn safe_log = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mu);
    log(line);
  };
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex fail_mu;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= out.runs.size()) return;
      AblationRun& run = out.runs[i];
      try {
        ModelConfig mc = spec.model;
        mc.attention.value_fn = run.variant;
        TrainConfig tc = spec.train;
        tc.seed = run.seed;
        Model model(mc, run.seed);
        const std::string tag =
            std::string(ToString(run.variant)) + " seed " + std::to_string(run.seed);
        run.result = Fit(model, train, val, tc, [&](const std::string& line) {
          safe_log(tag + ": " + line);
        });
        run.result.best_params.clear();
      } catch (...) {
        std::lock_guard<std::mutex> lock(fail_mu);
        if (!failure) failure = std::current_exception();
        next.store(out.runs.size());
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(
      1, std::min(spec.threads, out.runs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (ValueFn v : spec.variants) {
    AblationRow row;
    row.variant = v;
    std::vector<double> acc, f1;
    for (const AblationRun& r : out.runs) {
      if (r.variant != v) continue;
      acc.push_back(r.result.best_accuracy);
      f1.push_back(r.result.best_macro_f1);
    }
    auto mean_std = [](const std::vector<double>& x, double& mean, double& sd) {
      mean = 0.0;
      for (double a : x) mean += a;
      mean /= static_cast<double>(x.size());
      sd = 0.0;
      if (x.size() < 2) return;
      for (double a : x) sd += (a - mean) * (a - mean);
      sd = std::sqrt(sd / static_cast<double>(x.size() - 1));
    };
    row.runs = acc.size();
    mean_std(acc, row.accuracy_mean, row.accuracy_std);
    mean_std(f1, row.macro_f1_mean, row.macro_f1_std);
    out.rows.push_back(row);
  }
  return out;
}

void WriteMetricsTable(std::ostream& out, const std::vector<AblationRun>& runs) {
  out << "variant\tseed\tepoch\tloss\tacc\tmacro_f1\n";
  for (const AblationRun& r : runs) {
    for (const EpochRecord& e : r.result.epochs) {
      out << ToString(r.variant) << '\t' << r.seed << '\t' << e.epoch << '\t'
          << FormatExact(e.loss) << '\t' << FormatExact(e.accuracy) << '\t'
          << FormatExact(e.macro_f1) << '\n';
    }
  }
}

void WriteAblationTable(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant\truns\tacc_mean\tacc_std\tmacro_f1_mean\tmacro_f1_std\n";
  for (const AblationRow& r : rows) {
    out << ToString(r.variant) << '\t' << r.runs << '\t'
        << FormatExact(r.accuracy_mean) << '\t' << FormatExact(r.accuracy_std)
        << '\t' << FormatExact(r.macro_f1_mean) << '\t'
        << FormatExact(r.macro_f1_std) << '\n';
  }
}

}  // namespace qvi
