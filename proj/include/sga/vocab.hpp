/*
   Copyright 2026 The SGA Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <span>
#include <vector>

namespace sga {

using TokenId = int;

// Reserved ids at the bottom of every vocabulary.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kMask = 1;
inline constexpr TokenId kBlank = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNumSpecials = 4;

/// Token ids plus the language they are written in (-1 when unknown).
struct TokenSeq {
  std::vector<TokenId> ids;
  int lang = -1;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  std::span<const TokenId> span() const noexcept { return ids; }
  TokenId operator[](std::size_t i) const { return ids[i]; }

  friend bool operator==(const TokenSeq& a, const TokenSeq& b) { return a.ids == b.ids; }
};

}  // namespace sga
