#pragma once

#include <cstddef>

namespace irra {

using TokenId = std::size_t;

// Reserved vocabulary ids shared by the tokenizer, masking and text encoder.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kSosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kMaskId = 3;
inline constexpr TokenId kUnkId = 4;
inline constexpr std::size_t kNumSpecialTokens = 5;

}  // namespace irra
