#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>

#include "progrow/partition.hpp"

using progrow::balanced_partition;
using progrow::make_plan;
using Sizes = std::vector<std::size_t>;

namespace {

// Brute force: enumerate every composition of n into k positive parts, keep
// those whose parts differ by at most one, return the lexicographic minimum.
Sizes brute_force_partition(std::size_t n, std::size_t k) {
  std::optional<Sizes> best;
  Sizes cur;
  std::function<void(std::size_t)> rec = [&](std::size_t left) {
    if (cur.size() == k) {
      if (left != 0) return;
      const auto [mn, mx] = std::minmax_element(cur.begin(), cur.end());
      if (*mx - *mn <= 1 && (!best || cur < *best)) best = cur;
      return;
    }
    for (std::size_t v = 1; v <= left; ++v) {
      cur.push_back(v);
      rec(left - v);
      cur.pop_back();
    }
  };
  rec(n);
  return *best;
}

}  // namespace

TEST(BalancedPartition, TableRows) {
  EXPECT_EQ(balanced_partition(8, 4), (Sizes{2, 2, 2, 2}));
  EXPECT_EQ(balanced_partition(16, 4), (Sizes{4, 4, 4, 4}));
  EXPECT_EQ(balanced_partition(33, 4), (Sizes{8, 8, 8, 9}));
  EXPECT_EQ(balanced_partition(50, 4), (Sizes{12, 12, 13, 13}));
  EXPECT_EQ(balanced_partition(8, 2), (Sizes{4, 4}));
  EXPECT_EQ(balanced_partition(16, 2), (Sizes{8, 8}));
  EXPECT_EQ(balanced_partition(33, 2), (Sizes{16, 17}));
  EXPECT_EQ(balanced_partition(50, 2), (Sizes{25, 25}));
  EXPECT_EQ(balanced_partition(12, 2), (Sizes{6, 6}));
  EXPECT_EQ(balanced_partition(24, 2), (Sizes{12, 12}));
}

TEST(BalancedPartition, SingleStage) { EXPECT_EQ(balanced_partition(37, 1), (Sizes{37})); }

TEST(BalancedPartition, MatchesBruteForceOnSmallInputs) {
  EXPECT_EQ(brute_force_partition(7, 3), (Sizes{2, 2, 3}));
  EXPECT_EQ(balanced_partition(7, 3), (Sizes{2, 2, 3}));
  for (std::size_t n = 1; n <= 12; ++n)
    for (std::size_t k = 1; k <= n; ++k) EXPECT_EQ(balanced_partition(n, k), brute_force_partition(n, k)) << n << "," << k;
}

TEST(BalancedPartition, RejectsInvalidStageCounts) {
  EXPECT_THROW(balanced_partition(4, 5), progrow::PartitionError);
  EXPECT_THROW(balanced_partition(4, 0), progrow::PartitionError);
  EXPECT_THROW(make_plan(3, 4), progrow::PartitionError);
}

TEST(BalancedPartition, ExhaustiveInvariants) {
  for (std::size_t n = 1; n <= 200; ++n)
    for (std::size_t k = 1; k <= n; ++k) {
      const auto s = balanced_partition(n, k);
      ASSERT_EQ(s.size(), k);
      ASSERT_EQ(std::accumulate(s.begin(), s.end(), std::size_t{0}), n);
      ASSERT_GE(*std::min_element(s.begin(), s.end()), 1u);
      ASSERT_LE(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()), 1u);
      ASSERT_TRUE(std::is_sorted(s.begin(), s.end()));
    }
}

TEST(MakePlan, IndexSets) {
  const auto p = make_plan(8, 4);
  ASSERT_EQ(p.index_sets.size(), 4u);
  EXPECT_EQ(p.index_sets[0], (progrow::IndexRange{1, 2}));
  EXPECT_EQ(p.index_sets[1], (progrow::IndexRange{3, 4}));
  EXPECT_EQ(p.index_sets[2], (progrow::IndexRange{5, 6}));
  EXPECT_EQ(p.index_sets[3], (progrow::IndexRange{7, 8}));
  EXPECT_EQ(p.cut_points, (Sizes{2, 4, 6, 8}));

  const auto half = make_plan(50, 2);
  EXPECT_EQ(half.index_sets[0], (progrow::IndexRange{1, 25}));
  EXPECT_EQ(half.index_sets[1], (progrow::IndexRange{26, 50}));

  const auto singletons = make_plan(5, 5);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(singletons.index_sets[k], (progrow::IndexRange{k + 1, k + 1}));
}

TEST(MakePlan, ConcatenatedIndexSetsReproduceOrder) {
  for (std::size_t n = 1; n <= 200; ++n)
    for (std::size_t k = 1; k <= n; ++k) {
      const auto p = make_plan(n, k);
      std::size_t expect = 1;
      for (const auto& r : p.index_sets)
        for (std::size_t i = r.first; i <= r.last; ++i) ASSERT_EQ(i, expect++);
      ASSERT_EQ(expect, n + 1);
      ASSERT_EQ(p.cut_points.back(), n);
    }
}

TEST(MakePlan, ActiveBlocksRejectsOutOfRangeStage) {
  const auto p = make_plan(8, 4);
  EXPECT_EQ(p.active_blocks(1), 2u);
  EXPECT_THROW(p.active_blocks(0), progrow::PartitionError);
  EXPECT_THROW(p.active_blocks(5), progrow::PartitionError);
}
