#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"

using namespace qbiv;

namespace {

HashFamilyConfig cfg(HashFamily f, std::uint32_t M, std::uint32_t n, std::uint32_t dim, std::uint64_t seed) {
  return {f, HashDomain::vbh, M, n, dim, seed};
}

}  // namespace

TEST(Hyperplane, SamplingIsDeterministic) {
  const auto c = cfg(HashFamily::lsh_s, 3, 2, 3, 7);
  EXPECT_TRUE(sample_hash_bank(c) == sample_hash_bank(c));
  auto other = c;
  other.seed = 8;
  EXPECT_FALSE(sample_hash_bank(c) == sample_hash_bank(other));
}

TEST(Hyperplane, SignPlanesArePlusMinusOne) {
  const auto bank = sample_hash_bank(cfg(HashFamily::lsh_s, 4, 6, 10, 3));
  std::set<double> seen;
  for (const auto& h : bank.hyperplanes)
    for (double v : h.planes) seen.insert(v);
  EXPECT_EQ(seen, (std::set<double>{-1.0, 1.0}));
}

TEST(Hyperplane, GaussianPlanesAreFloatRepresentable) {
  const auto bank = sample_hash_bank(cfg(HashFamily::lsh_c, 2, 5, 7, 1));
  for (const auto& h : bank.hyperplanes)
    for (double v : h.planes) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
}

TEST(Hyperplane, BitSamplingIndicesInRangeAndDistinct) {
  const auto bank = sample_hash_bank(cfg(HashFamily::lsh_b, 8, 8, 32, 5));
  for (const auto& h : bank.hyperplanes) {
    ASSERT_EQ(h.indices.size(), 8u);
    for (auto i : h.indices) EXPECT_LT(i, 32u);
    EXPECT_EQ(std::set<std::uint32_t>(h.indices.begin(), h.indices.end()).size(), 8u);
  }
  // More bits than coordinates: every coordinate appears before any repeats.
  const auto wide = sample_hash_bank(cfg(HashFamily::lsh_b, 1, 10, 4, 5));
  const auto& idx = wide.hyperplanes[0].indices;
  EXPECT_EQ(std::set<std::uint32_t>(idx.begin(), idx.begin() + 4).size(), 4u);
}

TEST(Hyperplane, BitOrderIsLittleEndian) {
  HyperplaneHash h{HashFamily::lsh_b, 2, {}, {0, 1}};
  EXPECT_EQ(h(std::vector<double>{0.5, -0.3}).value, 1u);
  EXPECT_EQ(h(std::vector<double>{-0.5, 0.3}).value, 2u);
  EXPECT_EQ(h(std::vector<double>{0.0, 0.0}).value, 3u);  // zero counts as non-negative
}

TEST(Hyperplane, PositiveScalingInvariant) {
  CounterRng rng(9);
  const auto bank = sample_hash_bank(cfg(HashFamily::lsh_c, 4, 12, 6, 2));
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(6), w(6);
    for (std::size_t j = 0; j < 6; ++j) {
      v[j] = rng.normal();
      w[j] = 3.0 * v[j];
    }
    for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(bank.hash(m, v), bank.hash(m, w));
  }
}

TEST(Hyperplane, RejectsWrongDimensionAndVqSampling) {
  const auto bank = sample_hash_bank(cfg(HashFamily::lsh_c, 1, 3, 4, 2));
  EXPECT_THROW(bank.hash(0, std::vector<double>{1.0, 2.0}), Error);
  EXPECT_THROW(sample_hash_bank(cfg(HashFamily::vq, 1, 3, 4, 2)), Error);
  EXPECT_THROW(sample_hash_bank(cfg(HashFamily::lsh_c, 1, 25, 4, 2)), Error);
}

TEST(Vq, NearestCentroid) {
  Matrix c(2, 2);
  c(1, 0) = c(1, 1) = 10.0;
  const VqHash h{c};
  EXPECT_EQ(h(std::vector<double>{1.0, 1.0}).value, 0u);
  EXPECT_EQ(h(std::vector<double>{9.0, 8.0}).value, 1u);
  EXPECT_EQ(h(std::vector<double>{5.0, 5.0}).value, 0u);  // tie goes low
}

TEST(Vq, ExactlyTwoToTheNPointsArePermuted) {
  Matrix pts(0, 2);
  for (int i = 0; i < 8; ++i) pts.append_row(std::vector<double>{static_cast<double>(i), static_cast<double>(i * i % 5)});
  const std::vector<Matrix> parts{pts};
  const auto r = train_vq_bank(parts, {HashFamily::vq, HashDomain::vbh, 2, 3, 2, 4});
  EXPECT_TRUE(r.report.fallbacks.empty());
  for (const auto& q : r.bank.quantizers) {
    std::vector<std::vector<double>> got, want;
    for (std::size_t i = 0; i < 8; ++i) {
      got.emplace_back(q.centroids.row(i).begin(), q.centroids.row(i).end());
      want.emplace_back(pts.row(i).begin(), pts.row(i).end());
    }
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want);
  }
}

TEST(Vq, PlantedClusters) {
  CounterRng rng(31);
  Matrix pts(0, 2);
  for (int i = 0; i < 200; ++i) {
    const double c = i % 2 == 0 ? 0.0 : 10.0;
    pts.append_row(std::vector<double>{c + 0.3 * rng.normal(), c + 0.3 * rng.normal()});
  }
  const std::vector<Matrix> parts{pts};
  const auto r = train_vq_bank(parts, {HashFamily::vq, HashDomain::vbh, 3, 1, 2, 11});
  for (const auto& q : r.bank.quantizers) {
    const auto& c = q.centroids;
    const std::size_t lo = c(0, 0) < c(1, 0) ? 0 : 1;
    EXPECT_LT(std::sqrt(squared_distance(c.row(lo), std::vector<double>{0.0, 0.0})), 0.5);
    EXPECT_LT(std::sqrt(squared_distance(c.row(1 - lo), std::vector<double>{10.0, 10.0})), 0.5);
  }
}

TEST(Vq, HashingCentroidIsIdempotent) {
  CounterRng rng(1);
  Matrix pts(0, 3);
  for (int i = 0; i < 300; ++i) pts.append_row(std::vector<double>{rng.normal(), rng.normal(), rng.normal()});
  const std::vector<Matrix> parts{pts};
  const auto r = train_vq_bank(parts, {HashFamily::vq, HashDomain::vbh, 1, 4, 3, 2});
  const auto& q = r.bank.quantizers[0];
  for (std::uint32_t b = 0; b < 16; ++b) EXPECT_EQ(q(q.centroids.row(b)).value, b);
}

TEST(Vq, DeterministicAndFallbackReported) {
  CounterRng rng(3);
  Matrix big(0, 2), tiny(0, 2), none(0, 2);
  for (int i = 0; i < 40; ++i) big.append_row(std::vector<double>{rng.normal(), rng.normal()});
  for (int i = 0; i < 3; ++i) tiny.append_row(std::vector<double>{rng.normal(), rng.normal()});
  const std::vector<Matrix> parts{big, tiny, none};
  const HashFamilyConfig c{HashFamily::vq, HashDomain::gbh, 3, 3, 2, 5};
  const auto a = train_vq_bank(parts, c);
  const auto b = train_vq_bank(parts, c);
  EXPECT_TRUE(a.bank == b.bank);
  ASSERT_EQ(a.report.fallbacks.size(), 2u);
  EXPECT_EQ(a.report.fallbacks[0].hash_index, 1u);
  EXPECT_EQ(a.report.fallbacks[0].points, 3u);
  EXPECT_EQ(a.report.fallbacks[1].hash_index, 2u);
  EXPECT_EQ(a.report.fallbacks[1].points, 0u);
  for (const auto& q : a.bank.quantizers) EXPECT_EQ(q.centroids.rows(), 8u);
}

TEST(Vq, RejectsBadInputs) {
  const std::vector<Matrix> empty{Matrix(0, 2)};
  EXPECT_THROW(train_vq_bank(empty, {HashFamily::vq, HashDomain::vbh, 1, 2, 2, 0}), Error);
  const std::vector<Matrix> two{Matrix(4, 2), Matrix(4, 2)};
  EXPECT_THROW(train_vq_bank(two, {HashFamily::vq, HashDomain::gbh, 3, 1, 2, 0}), Error);
  EXPECT_THROW(train_vq_bank(two, {HashFamily::lsh_c, HashDomain::gbh, 2, 1, 2, 0}), Error);
}

TEST(Gbh, Chunks) {
  const std::vector<double> fv{1.0, 2.0, 3.0, 4.0};
  const auto one = gbh_chunks(fv, 1, 4);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], fv);
  const auto two = gbh_chunks(fv, 2, 2);
  EXPECT_EQ(two[0], (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(two[1], (std::vector<double>{3.0, 4.0}));
  EXPECT_THROW(gbh_chunks(fv, 3, 2), Error);
}

TEST(Gbh, DomainCheck) {
  HashFamilyConfig c{HashFamily::lsh_c, HashDomain::gbh, 4, 2, 8, 0};
  EXPECT_NO_THROW(c.check_domain(4, 8));
  EXPECT_THROW(c.check_domain(4, 2), Error);
  c.domain = HashDomain::vbh;
  c.input_dim = 32;
  EXPECT_NO_THROW(c.check_domain(4, 8));
}
