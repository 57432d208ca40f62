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

// Losses, optimizers, metrics, the training loop and ablation sweeps.

#ifndef QVI_TRAIN_H_
#define QVI_TRAIN_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qvi/data.h"
#include "qvi/graph.h"
#include "qvi/model.h"
#include "qvi/params.h"

namespace qvi {

enum class OptimizerKind { kAdam, kSgd };
std::string_view ToString(OptimizerKind v);
OptimizerKind ParseOptimizerKind(std::string_view s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  // Stop after this many evaluated epochs without a new best validation
  // accuracy; 0 disables early stopping.
  std::size_t early_stop_patience = 0;
  // Evaluate every k-th epoch (and always after the last one).
  std::size_t eval_every = 1;
  // Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 5.0;

  // Throws ConfigError naming the offending field.
  void Validate() const;
};

// Mean over the batch of -log softmax(logits)[label].
Tensor CrossEntropy(Graph& g, const Tensor& logits, std::span<const int> labels);

// Rescales all gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double ClipGradNorm(const std::vector<NamedParam>& params, double max_norm);

// Per-parameter optimizer state. Adam keeps first and second moments; SGD
// keeps only the step count.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config);

  // Applies one update using the gradients stored on `params`. Parameters
  // without a gradient buffer are treated as having zero gradient.
  void Step(const std::vector<NamedParam>& params);

  std::uint64_t step() const { return step_; }

  // Text format with hexfloat moments; restore is bit-exact. Load checks
  // parameter names and sizes against the saved ones.
  void Save(std::ostream& out) const;
  void Load(std::istream& in);

 private:
  struct Slot {
    std::string name;
    std::vector<double> m;
    std::vector<double> v;
  };
  void EnsureSlots(const std::vector<NamedParam>& params);

  TrainConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Slot> slots_;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double loss = 0.0;
};

// Accuracy and macro-F1 from predictions. Per-class F1 is
// 2 tp / (2 tp + fp + fn); a class that appears in neither predictions nor
// labels has an undefined F1 and is left out of the mean.
Metrics ComputeMetrics(std::span<const int> predictions,
                       std::span<const int> labels, std::size_t num_classes);

// Evaluation without dropout; also reports the mean cross-entropy.
Metrics Evaluate(const Model& model, const Dataset& dataset,
                 std::size_t batch_size = 256);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch
  double accuracy = 0.0;  // validation; carried forward on skipped epochs
  double macro_f1 = 0.0;
  bool evaluated = false;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_accuracy = 0.0;
  double best_macro_f1 = 0.0;
  bool early_stopped = false;
  std::size_t clip_events = 0;
  double wall_seconds = 0.0;
  // Parameter values at best_epoch; Fit also restores them into the model.
  std::vector<NamedParam> best_params;
};

using LogFn = std::function<void(const std::string&)>;

// Trains `model` in place. Throws NonFiniteError naming the first
// non-finite tensor when the loss, a gradient or a parameter stops being
// finite.
RunResult Fit(Model& model, const Dataset& train, const Dataset& val,
              const TrainConfig& config, const LogFn& log = nullptr);

struct AblationSpec {
  ModelConfig model;
  TrainConfig train;
  std::vector<ValueFn> variants;
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 1;
};

struct AblationRun {
  ValueFn variant = ValueFn::kStandard;
  std::uint64_t seed = 0;
  RunResult result;
};

struct AblationRow {
  ValueFn variant = ValueFn::kStandard;
  std::size_t runs = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // sample standard deviation; 0 for one run
  double macro_f1_mean = 0.0;
  double macro_f1_std = 0.0;
};

struct AblationResult {
  std::vector<AblationRun> runs;  // variant-major, seeds in given order
  std::vector<AblationRow> rows;  // one per variant, in given order
};

// Trains every variant with every seed on the same data. A run with seed s
// initializes its model and shuffles with s, so variants share initial
// values for every parameter they have in common.
AblationResult RunAblation(const AblationSpec& spec, const Dataset& train,
                           const Dataset& val, const LogFn& log = nullptr);

// Columns: variant, seed, epoch, loss, acc, macro_f1 (tab separated, with
// a header line). Numbers use the shortest exact decimal form.
void WriteMetricsTable(std::ostream& out, const std::vector<AblationRun>& runs);
// Columns: variant, runs, acc_mean, acc_std, macro_f1_mean, macro_f1_std.
void WriteAblationTable(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace qvi

#endif  // QVI_TRAIN_H_
