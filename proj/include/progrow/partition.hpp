#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace progrow {

class PartitionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Contiguous 1-based block index range [first, last].
struct IndexRange {
  std::size_t first, last;
  std::size_t size() const { return last - first + 1; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

// Partition of N ordered blocks into K contiguous stages. Stage k (1-based)
// owns blocks index_sets[k-1]; cut_points[k-1] is the number of blocks active
// once stage k is reached.
struct StagePlan {
  std::size_t block_count = 0;
  std::size_t stage_count = 0;
  std::vector<std::size_t> sizes;
  std::vector<IndexRange> index_sets;
  std::vector<std::size_t> cut_points;

  std::size_t active_blocks(std::size_t stage) const {
    if (stage < 1 || stage > stage_count)
      throw PartitionError("stage " + std::to_string(stage) + " outside 1.." + std::to_string(stage_count));
    return cut_points[stage - 1];
  }
};

// Lexicographically smallest K-tuple of positive integers summing to N whose
// entries differ by at most one: K - N mod K copies of floor(N/K) followed by
// N mod K copies of ceil(N/K).
inline std::vector<std::size_t> balanced_partition(std::size_t n, std::size_t k) {
  if (k == 0) throw PartitionError("stage count must be at least 1");
  if (n == 0) throw PartitionError("block count must be at least 1");
  if (k > n)
    throw PartitionError("cannot split " + std::to_string(n) + " blocks into " + std::to_string(k) + " non-empty stages");
  const std::size_t base = n / k, extra = n % k;
  std::vector<std::size_t> sizes(k, base);
  for (std::size_t i = k - extra; i < k; ++i) ++sizes[i];
  return sizes;
}

inline StagePlan make_plan(std::size_t n, std::size_t k) {
  StagePlan plan;
  plan.block_count = n;
  plan.stage_count = k;
  plan.sizes = balanced_partition(n, k);
  std::size_t cut = 0;
  for (auto s : plan.sizes) {
    plan.index_sets.push_back({cut + 1, cut + s});
    cut += s;
    plan.cut_points.push_back(cut);
  }
  return plan;
}

}  // namespace progrow
