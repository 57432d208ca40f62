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

#include "qvi/graph.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>

#include "qvi/error.h"
#include "qvi/rng.h"

namespace qvi {
namespace {

constexpr double kMaskFill = -1e30;
constexpr double kLayerNormEps = 1e-5;

std::string PairString(const Tensor& a, const Tensor& b) {
  return ShapeString(a.shape()) + " and " + ShapeString(b.shape());
}

// For every flat index of `a`, the flat index of `b` it reads from under
// right-aligned broadcasting. Empty when the shapes are identical.
std::vector<std::size_t> BroadcastIndex(const Shape& a, const Shape& b,
                                        const char* op) {
  if (a == b) return {};
  if (b.size() > a.size()) {
    throw DimensionError(std::string(op) + ": cannot broadcast " +
                         ShapeString(b) + " to " + ShapeString(a));
  }
  const std::size_t r = a.size();
  const std::size_t pad = r - b.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > pad;) {
    const std::size_t bd = b[i - pad];
    if (bd != a[i] && bd != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " +
                           ShapeString(b) + " to " + ShapeString(a));
    }
    stride[i] = bd == 1 ? 0 : s;
    s *= bd;
  }
  const std::size_t n = NumElements(a);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = offset;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      offset += stride[ax];
      if (counter[ax] < a[ax]) break;
      offset -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return index;
}

void AccumulateInto(Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto dst = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

bool Graph::ShouldRecord(std::initializer_list<const Tensor*> inputs) const {
  if (!record_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void Graph::Record(const char* op, std::vector<Tensor> inputs, Tensor& output,
                   std::function<void()> backward) {
  if (backward_done_) {
    throw StateError("graph already ran backward; call Reset() first");
  }
  output.set_requires_grad(true);
  nodes_.push_back(
      Node{op, std::move(inputs), output, std::move(backward)});
}

Tensor Graph::MatMul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank>=2 operands, got " +
                         PairString(a, b));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const bool shared = b.rank() == 2 && a.rank() > 2;
  if (b.dim(-2) != k) {
    throw DimensionError("matmul inner dimensions disagree: " +
                         PairString(a, b));
  }
  if (!shared) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2,
                    b.shape().begin())) {
      throw DimensionError("matmul batch dimensions disagree: " +
                           PairString(a, b));
    }
  }
  const std::size_t n = b.dim(-1);
  const std::size_t batch = a.size() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out = Tensor::Zeros(out_shape);

  {
    auto A = a.data();
    auto B = b.data();
    auto C = out.data();
    for (std::size_t t = 0; t < batch; ++t) {
      const double* ap = A.data() + t * m * k;
      const double* bp = B.data() + (shared ? 0 : t * k * n);
      double* cp = C.data() + t * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ap[i * k + p];
          for (std::size_t j = 0; j < n; ++j) cp[i * n + j] += av * bp[p * n + j];
        }
      }
    }
  }

  if (ShouldRecord({&a, &b})) {
    Record("matmul", {a, b}, out, [a = Tensor(a), b = Tensor(b), out, m, k, n, batch, shared]() mutable {
      auto G = std::as_const(out).grad();
      auto A = std::as_const(a).data();
      auto B = std::as_const(b).data();
      if (a.requires_grad()) {
        auto dA = a.mutable_grad();
        for (std::size_t t = 0; t < batch; ++t) {
          const double* gp = G.data() + t * m * n;
          const double* bp = B.data() + (shared ? 0 : t * k * n);
          double* dp = dA.data() + t * m * k;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += gp[i * n + j] * bp[p * n + j];
              dp[i * k + p] += s;
            }
        }
      }
      if (b.requires_grad()) {
        auto dB = b.mutable_grad();
        for (std::size_t t = 0; t < batch; ++t) {
          const double* gp = G.data() + t * m * n;
          const double* ap = A.data() + t * m * k;
          double* dp = dB.data() + (shared ? 0 : t * k * n);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = ap[i * k + p];
              for (std::size_t j = 0; j < n; ++j) dp[p * n + j] += av * gp[i * n + j];
            }
        }
      }
    });
  }
  return out;
}

Tensor Graph::Transpose(const Tensor& x) {
  if (x.rank() < 2) {
    throw DimensionError("transpose needs rank>=2, got " +
                         ShapeString(x.shape()));
  }
  const std::size_t r = x.dim(-2);
  const std::size_t c = x.dim(-1);
  const std::size_t batch = x.size() / (r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Tensor out = Tensor::Zeros(out_shape);
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        Y[t * r * c + j * r + i] = X[t * r * c + i * c + j];

  if (ShouldRecord({&x})) {
    Record("transpose", {x}, out, [x = Tensor(x), out, r, c, batch]() mutable {
      auto G = std::as_const(out).grad();
      auto dX = x.mutable_grad();
      for (std::size_t t = 0; t < batch; ++t)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            dX[t * r * c + i * c + j] += G[t * r * c + j * r + i];
    });
  }
  return out;
}

Tensor Graph::Reshape(const Tensor& x, Shape shape) {
  if (NumElements(shape) != x.size()) {
    throw DimensionError("cannot reshape " + ShapeString(x.shape()) +
                         " to " + ShapeString(shape));
  }
  auto src = x.data();
  Tensor out = Tensor::FromData(std::move(shape),
                                std::vector<double>(src.begin(), src.end()));
  if (ShouldRecord({&x})) {
    Record("reshape", {x}, out, [x = Tensor(x), out]() mutable {
      AccumulateInto(x, std::as_const(out).grad());
    });
  }
  return out;
}

Tensor Graph::Elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const char* name = op == BinaryOp::kAdd   ? "add"
                     : op == BinaryOp::kSub ? "sub"
                                            : "mul";
  auto index = std::make_shared<const std::vector<std::size_t>>(
      BroadcastIndex(a.shape(), b.shape(), name));
  const bool same = index->empty();
  Tensor out = Tensor::Zeros(a.shape());
  {
    auto A = a.data();
    auto B = b.data();
    auto Y = out.data();
    for (std::size_t i = 0; i < Y.size(); ++i) {
      const double bv = B[same ? i : (*index)[i]];
      switch (op) {
        case BinaryOp::kAdd: Y[i] = A[i] + bv; break;
        case BinaryOp::kSub: Y[i] = A[i] - bv; break;
        case BinaryOp::kMul: Y[i] = A[i] * bv; break;
      }
    }
  }
  if (ShouldRecord({&a, &b})) {
    Record(name, {a, b}, out, [op, a = Tensor(a), b = Tensor(b), out, index, same]() mutable {
      auto G = std::as_const(out).grad();
      auto A = std::as_const(a).data();
      auto B = std::as_const(b).data();
      if (a.requires_grad()) {
        auto dA = a.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) {
          dA[i] += op == BinaryOp::kMul ? G[i] * B[same ? i : (*index)[i]]
                                        : G[i];
        }
      }
      if (b.requires_grad()) {
        auto dB = b.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) {
          const std::size_t j = same ? i : (*index)[i];
          switch (op) {
            case BinaryOp::kAdd: dB[j] += G[i]; break;
            case BinaryOp::kSub: dB[j] -= G[i]; break;
            case BinaryOp::kMul: dB[j] += G[i] * A[i]; break;
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::Scale(const Tensor& x, double factor) {
  return Affine(x, factor, 0.0);
}

Tensor Graph::Affine(const Tensor& x, double factor, double offset) {
  Tensor out = Tensor::Zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = factor * X[i] + offset;
  if (ShouldRecord({&x})) {
    Record("affine", {x}, out, [x = Tensor(x), out, factor]() mutable {
      auto G = std::as_const(out).grad();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dX[i] += factor * G[i];
    });
  }
  return out;
}

Tensor Graph::Sigmoid(const Tensor& x) {
  Tensor out = Tensor::Zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) {
    const double v = X[i];
    if (v >= 0) {
      Y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      Y[i] = e / (1.0 + e);
    }
  }
  if (ShouldRecord({&x})) {
    Record("sigmoid", {x}, out, [x = Tensor(x), out]() mutable {
      auto G = std::as_const(out).grad();
      auto Y = std::as_const(out).data();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i)
        dX[i] += G[i] * Y[i] * (1.0 - Y[i]);
    });
  }
  return out;
}

Tensor Graph::Tanh(const Tensor& x) {
  Tensor out = Tensor::Zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = std::tanh(X[i]);
  if (ShouldRecord({&x})) {
    Record("tanh", {x}, out, [x = Tensor(x), out]() mutable {
      auto G = std::as_const(out).grad();
      auto Y = std::as_const(out).data();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i)
        dX[i] += G[i] * (1.0 - Y[i] * Y[i]);
    });
  }
  return out;
}

double Graph::MinReluInputMagnitude() const {
  double m = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_) {
    if (std::string_view(n.op) != "relu") continue;
    for (double v : n.inputs[0].data()) m = std::min(m, std::abs(v));
  }
  return m;
}

Tensor Graph::Relu(const Tensor& x) {
  Tensor out = Tensor::Zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = X[i] > 0 ? X[i] : 0.0;
  if (ShouldRecord({&x})) {
    Record("relu", {x}, out, [x = Tensor(x), out]() mutable {
      auto G = std::as_const(out).grad();
      auto X = std::as_const(x).data();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i)
        if (X[i] > 0) dX[i] += G[i];
    });
  }
  return out;
}

Tensor Graph::RowSoftmax(const Tensor& x, const Mask* mask) {
  if (mask && mask->shape != x.shape()) {
    throw DimensionError("softmax mask shape " + ShapeString(mask->shape) +
                         " does not match input " + ShapeString(x.shape()));
  }
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.size() / n;
  Tensor out = Tensor::Zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  std::vector<double> z(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    bool any = false;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const bool keep = !mask || (*mask)[base + j];
      any = any || keep;
      z[j] = X[base + j] + (keep ? 0.0 : kMaskFill);
      mx = std::max(mx, z[j]);
    }
    if (!any) {
      throw DegenerateMaskError("softmax row " + std::to_string(r) +
                                " is fully masked");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = std::exp(z[j] - mx);
      sum += z[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      const bool keep = !mask || (*mask)[base + j];
      Y[base + j] = keep ? z[j] / sum : 0.0;
    }
  }
  if (ShouldRecord({&x})) {
    Record("row_softmax", {x}, out, [x = Tensor(x), out, n, rows]() mutable {
      auto G = std::as_const(out).grad();
      auto Y = std::as_const(out).data();
      auto dX = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += G[base + j] * Y[base + j];
        for (std::size_t j = 0; j < n; ++j)
          dX[base + j] += Y[base + j] * (G[base + j] - dot);
      }
    });
  }
  return out;
}

Tensor Graph::Concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& lead = parts[0].shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != lead.size() ||
        !std::equal(lead.begin(), lead.end() - 1, p.shape().begin())) {
      throw DimensionError("concat leading dimensions disagree: " +
                           PairString(parts[0], p));
    }
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  Shape out_shape = lead;
  out_shape.back() = total;
  const std::size_t rows = parts[0].size() / widths[0];
  Tensor out = Tensor::Zeros(out_shape);
  auto Y = out.data();
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto X = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[p]; ++j)
        Y[r * total + col + j] = X[r * widths[p] + j];
    col += widths[p];
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (record_ && any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    Record("concat", inputs, out, [inputs, out, widths, rows, total]() mutable {
      auto G = std::as_const(out).grad();
      std::size_t col = 0;
      for (std::size_t p = 0; p < inputs.size(); ++p) {
        if (inputs[p].requires_grad()) {
          auto dX = inputs[p].mutable_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[p]; ++j)
              dX[r * widths[p] + j] += G[r * total + col + j];
        }
        col += widths[p];
      }
    });
  }
  return out;
}

Tensor Graph::ConcatFeatures(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_features row counts disagree: " +
                         PairString(a, b));
  }
  const Tensor parts[] = {a, b};
  return Concat(parts);
}

Tensor Graph::Reduce(ReduceOp op, const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) {
    throw DimensionError("reduce axis " + std::to_string(axis) +
                         " invalid for shape " + ShapeString(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (int i = ax + 1; i < r; ++i) inner *= x.shape()[i];
  const std::size_t len = x.shape()[ax];
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + ax);
  if (out_shape.empty()) out_shape = {1};
  const double factor = op == ReduceOp::kMean ? 1.0 / len : 1.0;
  Tensor out = Tensor::Zeros(out_shape);
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        Y[o * inner + i] += X[(o * len + l) * inner + i];
  if (factor != 1.0)
    for (double& v : Y) v *= factor;
  if (ShouldRecord({&x})) {
    Record(op == ReduceOp::kMean ? "mean" : "sum", {x}, out,
           [x = Tensor(x), out, outer, len, inner, factor]() mutable {
             auto G = std::as_const(out).grad();
             auto dX = x.mutable_grad();
             for (std::size_t o = 0; o < outer; ++o)
               for (std::size_t l = 0; l < len; ++l)
                 for (std::size_t i = 0; i < inner; ++i)
                   dX[(o * len + l) * inner + i] += factor * G[o * inner + i];
           });
  }
  return out;
}

Tensor Graph::SumAll(const Tensor& x) {
  return Reduce(ReduceOp::kSum, Reshape(x, {x.size()}), 0);
}

Tensor Graph::LayerNorm(const Tensor& x, const Tensor& gain,
                        const Tensor& bias) {
  const std::size_t d = x.dim(-1);
  if (d < 2) {
    throw ContractError("layer_norm needs a feature axis of length >= 2");
  }
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm gain/bias must be [" +
                         std::to_string(d) + "], got " +
                         PairString(gain, bias));
  }
  const std::size_t rows = x.size() / d;
  Tensor out = Tensor::Zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  auto X = x.data();
  auto Y = out.data();
  auto Gm = gain.data();
  auto Bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * rs;
      (*xhat)[r * d + j] = h;
      Y[r * d + j] = Gm[j] * h + Bs[j];
    }
  }
  if (ShouldRecord({&x, &gain, &bias})) {
    Record("layer_norm", {x, gain, bias}, out,
           [x = Tensor(x), gain = Tensor(gain), bias = Tensor(bias), out, xhat, rstd, rows, d]() mutable {
             auto G = std::as_const(out).grad();
             auto Gm = std::as_const(gain).data();
             const auto& H = *xhat;
             if (gain.requires_grad()) {
               auto dG = gain.mutable_grad();
               for (std::size_t i = 0; i < G.size(); ++i) dG[i % d] += G[i] * H[i];
             }
             if (bias.requires_grad()) {
               auto dB = bias.mutable_grad();
               for (std::size_t i = 0; i < G.size(); ++i) dB[i % d] += G[i];
             }
             if (x.requires_grad()) {
               auto dX = x.mutable_grad();
               for (std::size_t r = 0; r < rows; ++r) {
                 double m1 = 0.0, m2 = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = G[r * d + j] * Gm[j];
                   m1 += dh;
                   m2 += dh * H[r * d + j];
                 }
                 m1 /= d;
                 m2 /= d;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = G[r * d + j] * Gm[j];
                   dX[r * d + j] += (*rstd)[r] * (dh - m1 - H[r * d + j] * m2);
                 }
               }
             }
           });
  }
  return out;
}

Tensor Graph::Embedding(const Tensor& table, std::span<const int> ids,
                        const Shape& ids_shape) {
  if (table.rank() != 2) {
    throw DimensionError("embedding table must be rank 2, got " +
                         ShapeString(table.shape()));
  }
  if (NumElements(ids_shape) != ids.size()) {
    throw DimensionError("embedding ids do not match shape " +
                         ShapeString(ids_shape));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError("token id " + std::to_string(id) +
                      " out of range for vocabulary of size " +
                      std::to_string(vocab));
    }
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  Tensor out = Tensor::Zeros(out_shape);
  auto T = table.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(T.begin() + ids[i] * d, d, Y.begin() + i * d);
  if (ShouldRecord({&table})) {
    std::vector<int> idcopy(ids.begin(), ids.end());
    Record("embedding", {table}, out,
           [table = Tensor(table), out, idcopy = std::move(idcopy), d]() mutable {
             auto G = std::as_const(out).grad();
             auto dT = table.mutable_grad();
             for (std::size_t i = 0; i < idcopy.size(); ++i)
               for (std::size_t j = 0; j < d; ++j)
                 dT[idcopy[i] * d + j] += G[i * d + j];
           });
  }
  return out;
}

Tensor Graph::Dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout rate must be in [0, 1)");
  }
  if (rate == 0.0) return x;
  const double scale = 1.0 / (1.0 - rate);
  auto keep = std::make_shared<std::vector<double>>(x.size());
  for (double& k : *keep) k = rng.Uniform() >= rate ? scale : 0.0;
  Tensor out = Tensor::Zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = X[i] * (*keep)[i];
  if (ShouldRecord({&x})) {
    Record("dropout", {x}, out, [x = Tensor(x), out, keep]() mutable {
      auto G = std::as_const(out).grad();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * (*keep)[i];
    });
  }
  return out;
}

Tensor Graph::SoftmaxCrossEntropy(const Tensor& logits,
                                  std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross-entropy logits must be [B, C], got " +
                         ShapeString(logits.shape()));
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross-entropy: " + std::to_string(labels.size()) +
                         " labels for logits " +
                         ShapeString(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError("label " + std::to_string(y) + " out of range for " +
                      std::to_string(classes) + " classes");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  auto L = logits.data();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = L.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[labels[b]];
    for (std::size_t c = 0; c < classes; ++c)
      (*probs)[b * classes + c] = std::exp(row[c] - lse);
  }
  Tensor out = Tensor::Scalar(total / batch);
  if (ShouldRecord({&logits})) {
    std::vector<int> ys(labels.begin(), labels.end());
    Record("cross_entropy", {logits}, out,
           [logits = Tensor(logits), out, probs, ys = std::move(ys), batch, classes]() mutable {
             const double g = std::as_const(out).grad()[0] / batch;
             auto dL = logits.mutable_grad();
             for (std::size_t b = 0; b < batch; ++b)
               for (std::size_t c = 0; c < classes; ++c) {
                 const double onehot = static_cast<int>(c) == ys[b] ? 1.0 : 0.0;
                 dL[b * classes + c] += g * ((*probs)[b * classes + c] - onehot);
               }
           });
  }
  return out;
}

void Graph::Backward(const Tensor& loss) {
  if (backward_done_) {
    throw StateError("backward already ran on this graph; call Reset() first");
  }
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got " +
                        (loss.defined() ? ShapeString(loss.shape())
                                        : std::string("undefined tensor")));
  }
  std::size_t end = nodes_.size();
  while (end > 0 && !nodes_[end - 1].output.SameStorage(loss)) --end;
  if (end == 0) {
    throw ContractError("loss was not produced by this graph");
  }
  backward_done_ = true;
  Tensor root = loss;
  root.mutable_grad()[0] += 1.0;
  for (std::size_t i = end; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.output.has_grad()) node.backward();
  }
}

void Graph::Reset() {
  nodes_.clear();
  backward_done_ = false;
}

std::vector<std::string> Graph::OpTrace() const {
  std::vector<std::string> ops;
  ops.reserve(nodes_.size());
  for (const Node& n : nodes_) ops.emplace_back(n.op);
  return ops;
}

std::optional<std::string> Graph::FirstNonFinite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      if (!n.inputs[j].AllFinite()) {
        return "input " + std::to_string(j) + " of op #" + std::to_string(i) +
               " (" + n.op + ", shape " + ShapeString(n.inputs[j].shape()) +
               ")";
      }
    }
    if (!n.output.AllFinite()) {
      return "output of op #" + std::to_string(i) + " (" + n.op + ", shape " +
             ShapeString(n.output.shape()) + ")";
    }
  }
  return std::nullopt;
}

}  // namespace qvi
