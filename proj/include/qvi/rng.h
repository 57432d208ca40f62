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

#ifndef QVI_RNG_H_
#define QVI_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace qvi {

// 64-bit FNV-1a. Stable across builds and platforms, unlike std::hash.
std::uint64_t Fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// Deterministic random source.
//
// The std:: distributions are implementation-defined, so the mapping from
// engine output to doubles is done here to keep generated data identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream keyed by (seed, tag).
  static Rng Derive(std::uint64_t seed, std::string_view tag);

  std::uint64_t NextU64() { return engine_(); }
  // [0, 1)
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Normal(double mean = 0.0, double stddev = 1.0);
  // Uniform on {0, ..., n-1}; n >= 1.
  std::uint64_t UniformInt(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace qvi

#endif  // QVI_RNG_H_
