#pragma once

#include <cstddef>
#include <vector>

namespace otkt {

// Token ids. 0..2 are reserved; everything else is a character.
using TokenSequence = std::vector<int>;

inline constexpr int kBlank = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kNumReserved = 3;

}  // namespace otkt
