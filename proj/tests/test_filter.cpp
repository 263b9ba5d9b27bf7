#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"

using namespace qbiv;

namespace {

std::vector<BucketId> buckets(std::initializer_list<std::uint32_t> v) {
  std::vector<BucketId> out;
  for (auto b : v) out.push_back({b});
  return out;
}

std::vector<std::uint64_t> set_bits(const SceneFilter& f) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t a = 0; a < f.size_bits(); ++a)
    if (f.test(a)) out.push_back(a);
  return out;
}

}  // namespace

TEST(Filter, PartitionedOffsets) {
  SceneFilter f("s", FilterConfig::make_partitioned(2, 8));
  f.insert(buckets({3, 5}));
  EXPECT_EQ(set_bits(f), (std::vector<std::uint64_t>{3, 13}));
  EXPECT_EQ(f.popcount(), 2u);
  const auto before = std::vector<std::uint64_t>(f.words().begin(), f.words().end());
  f.insert(buckets({3, 5}));
  EXPECT_EQ(std::vector<std::uint64_t>(f.words().begin(), f.words().end()), before);
  EXPECT_EQ(f.popcount(), 2u);
}

TEST(Filter, NonPartitionedCollisionCollapses) {
  SceneFilter f("s", FilterConfig::make_non_partitioned(2, 16));
  f.insert(buckets({4, 4}));
  EXPECT_EQ(f.popcount(), 1u);
  EXPECT_TRUE(f.test(4));
}

TEST(Filter, MembershipBasics) {
  for (bool partitioned : {true, false}) {
    const auto cfg = partitioned ? FilterConfig::make_partitioned(3, 16) : FilterConfig::make_non_partitioned(3, 16);
    SceneFilter f("s", cfg);
    EXPECT_FALSE(f.query_membership(buckets({1, 2, 3})));
    f.insert(buckets({1, 2, 3}));
    EXPECT_TRUE(f.query_membership(buckets({1, 2, 3})));
    SceneFilter full("s", cfg);
    for (std::uint64_t a = 0; a < full.size_bits(); ++a) full.set(a);
    EXPECT_TRUE(full.query_membership(buckets({15, 0, 7})));
  }
}

TEST(Filter, RejectsOutOfRange) {
  SceneFilter f("s", FilterConfig::make_partitioned(2, 8));
  EXPECT_THROW(f.insert(buckets({3, 8})), Error);
  EXPECT_EQ(f.popcount(), 0u);  // nothing set by a rejected insert
  EXPECT_THROW(f.insert(buckets({3})), Error);
  EXPECT_THROW(f.set(16), Error);
  EXPECT_THROW(FilterConfig::make_partitioned(2, 8).address(2, {0}), Error);
  EXPECT_THROW(SceneFilter("s", FilterConfig::make_partitioned(0, 8)), Error);
}

TEST(Filter, NoFalseNegativesRandomized) {
  CounterRng rng(77);
  for (bool partitioned : {true, false}) {
    for (int trial = 0; trial < 200; ++trial) {
      const auto m = static_cast<std::uint32_t>(1 + rng.below(8));
      const std::uint64_t range = std::uint64_t{1} << (1 + rng.below(10));
      const auto cfg = partitioned ? FilterConfig::make_partitioned(m, range) : FilterConfig::make_non_partitioned(m, range);
      SceneFilter f("s", cfg);
      std::vector<std::vector<BucketId>> items(1 + rng.below(30));
      for (auto& it : items) {
        for (std::uint32_t j = 0; j < m; ++j) it.push_back({static_cast<std::uint32_t>(rng.below(range))});
        f.insert(it);
      }
      for (const auto& it : items) ASSERT_TRUE(f.query_membership(it));
    }
  }
}

TEST(Filter, FalsePositiveRateFollowsFill) {
  // With a fill ratio p per partition, a random tuple hits with probability p^M.
  const std::uint32_t M = 4;
  const std::uint64_t L = 256;
  CounterRng rng(5);
  SceneFilter f("s", FilterConfig::make_partitioned(M, L));
  for (int i = 0; i < 120; ++i) {
    std::vector<BucketId> b;
    for (std::uint32_t m = 0; m < M; ++m) b.push_back({static_cast<std::uint32_t>(rng.below(L))});
    f.insert(b);
  }
  double expected = 1.0;
  for (std::uint32_t m = 0; m < M; ++m) {
    std::uint64_t ones = 0;
    for (std::uint64_t a = 0; a < L; ++a) ones += f.test(m * L + a) ? 1 : 0;
    expected *= static_cast<double>(ones) / static_cast<double>(L);
  }
  const int trials = 200000;
  int hits = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<BucketId> b;
    for (std::uint32_t m = 0; m < M; ++m) b.push_back({static_cast<std::uint32_t>(rng.below(L))});
    hits += f.query_membership(b) ? 1 : 0;
  }
  const double rate = static_cast<double>(hits) / trials;
  const double sd = std::sqrt(expected * (1 - expected) / trials);
  EXPECT_NEAR(rate, expected, 5 * sd + 1e-4);
}

TEST(Filter, BitBudgets) {
  for (std::uint32_t n : {4u, 8u, 12u}) {
    const auto p = FilterConfig::make_partitioned(512, std::uint64_t{1} << n);
    const auto np = FilterConfig::make_non_partitioned(512, std::uint64_t{1} << (n + 9));
    EXPECT_EQ(bit_budget(p), 512u << n);
    EXPECT_EQ(bit_budget(p), bit_budget(np));
  }
  EXPECT_EQ(bit_budget(FilterConfig::make_partitioned(1, 64)), bit_budget(FilterConfig::make_non_partitioned(1, 64)));
}

TEST(Filter, BitsOnlyGrow) {
  CounterRng rng(12);
  SceneFilter f("s", FilterConfig::make_non_partitioned(3, 100));
  std::vector<std::uint64_t> prev(f.words().begin(), f.words().end());
  for (int i = 0; i < 100; ++i) {
    f.insert(std::vector<BucketId>{{static_cast<std::uint32_t>(rng.below(100))},
                                   {static_cast<std::uint32_t>(rng.below(100))},
                                   {static_cast<std::uint32_t>(rng.below(100))}});
    for (std::size_t w = 0; w < prev.size(); ++w) EXPECT_EQ(prev[w] & ~f.words()[w], 0u);
    prev.assign(f.words().begin(), f.words().end());
  }
}
