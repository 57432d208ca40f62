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

// Small text helpers shared by the file formats.

#ifndef QVI_TEXT_H_
#define QVI_TEXT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qvi {

std::string_view Trim(std::string_view s);
std::vector<std::string_view> SplitWhitespace(std::string_view s);

// Exact round-trip representation ("%a").
std::string FormatHex(double v);
// Shortest decimal form that reads back to the same double.
std::string FormatExact(double v);

// Whole-string parses; nullopt on any trailing garbage. Doubles accept
// decimal and hexfloat forms.
std::optional<double> ParseDouble(std::string_view s);
std::optional<std::uint64_t> ParseUint(std::string_view s);
std::optional<bool> ParseBool(std::string_view s);

}  // namespace qvi

#endif  // QVI_TEXT_H_
