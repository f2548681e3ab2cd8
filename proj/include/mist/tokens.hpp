#pragma once

#include <cstdint>
#include <vector>

namespace mist {

using TokenSeq = std::vector<int>;

// Special token ids are fixed across every vocabulary.
constexpr int kPadId = 0;
constexpr int kClsId = 1;
constexpr int kSepId = 2;
constexpr int kMaskId = 3;
constexpr int kNumSpecialTokens = 4;

}  // namespace mist
