#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace propenc {

// 0/1 vector over a sentence's tokens selecting one proposition.
using BinaryMask = std::vector<std::uint8_t>;

inline std::size_t popcount(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto b : m) n += (b != 0);
  return n;
}

}  // namespace propenc
