#pragma once

#include <algorithm>
#include <span>
#include <vector>

namespace avur {

// Levenshtein distance with unit costs over arbitrary comparable tokens.
template <typename T>
size_t edit_distance(std::span<const T> ref, std::span<const T> hyp) {
  std::vector<size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= hyp.size(); ++j) {
      const size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

inline size_t edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return edit_distance<int>(std::span<const int>(ref), std::span<const int>(hyp));
}

}  // namespace avur
