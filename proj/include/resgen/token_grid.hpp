#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace resgen {

using Token = std::int32_t;

// Absorbing state. Codeword indices are 0-based, so any negative value is
// outside the vocabulary and never embedded.
inline constexpr Token kMask = -1;

// L x D grid of codeword indices, stored position-major: tokens[i * D + j] is
// depth j (0 = coarsest) at position i.
struct TokenGrid {
  std::size_t length = 0;
  std::size_t depth = 0;
  std::vector<Token> tokens;

  TokenGrid() = default;
  TokenGrid(std::size_t l, std::size_t d) : length(l), depth(d), tokens(l * d, kMask) {}

  Token& at(std::size_t i, std::size_t j) { return tokens[i * depth + j]; }
  Token at(std::size_t i, std::size_t j) const { return tokens[i * depth + j]; }

  // Number of MASK entries at position i.
  std::size_t masked_count(std::size_t i) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < depth; ++j) n += at(i, j) == kMask;
    return n;
  }

  // True when at every position the MASK entries form a depth suffix.
  bool depth_suffix_ok() const {
    for (std::size_t i = 0; i < length; ++i) {
      bool seen_mask = false;
      for (std::size_t j = 0; j < depth; ++j) {
        if (at(i, j) == kMask) {
          seen_mask = true;
        } else if (seen_mask) {
          return false;
        }
      }
    }
    return true;
  }

  bool operator==(const TokenGrid&) const = default;
};

}  // namespace resgen
