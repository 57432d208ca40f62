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

#ifndef QVI_GRAPH_H_
#define QVI_GRAPH_H_

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qvi/tensor.h"

namespace qvi {

class Rng;

enum class BinaryOp { kAdd, kSub, kMul };
enum class ReduceOp { kSum, kMean };

// Define-by-run tape for reverse-mode differentiation.
//
// Every op executed through a Graph whose output depends on a tensor with
// requires_grad() is appended to the tape. Backward() replays the tape in
// exact reverse order and accumulates into the `grad` buffers of every
// reachable tensor. A graph is single-use: call Reset() before reusing it.
//
// Broadcasting: binary ops accept `b` whose shape, right-aligned against
// `a`, has each axis either equal to `a`'s or 1. The result has `a`'s shape.
//
// Matrix ops work on the last two axes; any leading axes are batch axes.
class Graph {
 public:
  // With `record` false no tape is kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // a: [..., m, k]; b: [k, n] (shared across the batch) or [..., k, n].
  Tensor MatMul(const Tensor& a, const Tensor& b);
  // Swap the last two axes.
  Tensor Transpose(const Tensor& x);
  Tensor Reshape(const Tensor& x, Shape shape);

  Tensor Elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
  Tensor Add(const Tensor& a, const Tensor& b) {
    return Elementwise(BinaryOp::kAdd, a, b);
  }
  Tensor Sub(const Tensor& a, const Tensor& b) {
    return Elementwise(BinaryOp::kSub, a, b);
  }
  Tensor Mul(const Tensor& a, const Tensor& b) {
    return Elementwise(BinaryOp::kMul, a, b);
  }
  Tensor Scale(const Tensor& x, double factor);
  // factor * x + offset, elementwise.
  Tensor Affine(const Tensor& x, double factor, double offset);

  Tensor Sigmoid(const Tensor& x);
  Tensor Tanh(const Tensor& x);
  Tensor Relu(const Tensor& x);

  // Softmax over the last axis. Masked positions get exactly 0 and receive
  // exactly 0 gradient. `mask`, when given, must match x's shape.
  Tensor RowSoftmax(const Tensor& x, const Mask* mask = nullptr);

  // Concatenation along the last axis; leading axes must agree.
  Tensor Concat(std::span<const Tensor> parts);
  Tensor ConcatFeatures(const Tensor& a, const Tensor& b);

  // Removes `axis`; a rank-1 input reduces to shape {1}.
  Tensor Reduce(ReduceOp op, const Tensor& x, int axis);
  Tensor SumAll(const Tensor& x);

  // Per-row normalization over the last axis, eps = 1e-5 inside the sqrt.
  Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias);

  // Row lookup: ids of shape `ids_shape` index rows of table [V, d]; the
  // result has shape ids_shape + {d}.
  Tensor Embedding(const Tensor& table, std::span<const int> ids,
                   const Shape& ids_shape);

  // Inverted dropout; identity when rate == 0.
  Tensor Dropout(const Tensor& x, double rate, Rng& rng);

  // Mean over rows of -log softmax(logits)[label]. logits: [B, C].
  Tensor SoftmaxCrossEntropy(const Tensor& logits,
                             std::span<const int> labels);

  // loss must be a scalar produced by this graph.
  void Backward(const Tensor& loss);

  // Drops the tape so the graph can record a new forward pass.
  void Reset();

  bool recording() const { return record_; }
  std::size_t num_nodes() const { return nodes_.size(); }
  // Op kinds in execution order.
  std::vector<std::string> OpTrace() const;
  // Description of the first recorded op whose output is non-finite.
  std::optional<std::string> FirstNonFinite() const;
  // Smallest |x| over every input fed to a recorded relu; +inf if none.
  double MinReluInputMagnitude() const;

 private:
  struct Node {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  bool ShouldRecord(std::initializer_list<const Tensor*> inputs) const;
  void Record(const char* op, std::vector<Tensor> inputs, Tensor& output,
              std::function<void()> backward);

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
};

}  // namespace qvi

#endif  // QVI_GRAPH_H_
