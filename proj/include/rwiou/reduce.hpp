#pragma once

#include <cstddef>
#include <span>

namespace rwiou {

// Sum with a fixed binary reduction tree: the result depends only on the
// order of `values`, never on how the caller produced them.
inline double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kLeaf = 8;
  if (values.size() <= kLeaf) {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace rwiou
