#pragma once

/// Locality-sensitive hash banks (random Gaussian hyperplanes, random +/-1
/// hyperplanes, axis-aligned sign bits) and K-means vector-quantizer hashes.
/// Every hash maps an item to one of 2^n buckets.

#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "qbiv/binary_io.hpp"
#include "qbiv/core.hpp"
#include "qbiv/kmeans.hpp"

namespace qbiv {

enum class HashFamily : std::uint8_t { lsh_c = 0, lsh_s = 1, lsh_b = 2, vq = 3 };
enum class HashDomain : std::uint8_t { vbh = 0, gbh = 1 };

inline const char* to_string(HashFamily f) {
  switch (f) {
    case HashFamily::lsh_c: return "lsh_c";
    case HashFamily::lsh_s: return "lsh_s";
    case HashFamily::lsh_b: return "lsh_b";
    case HashFamily::vq: return "vq";
  }
  return "?";
}

inline const char* to_string(HashDomain d) { return d == HashDomain::vbh ? "vbh" : "gbh"; }

inline constexpr std::uint32_t kMaxHashBits = 24;
inline constexpr std::size_t kVqIterations = 50;

struct BucketId {
  std::uint32_t value = 0;
  auto operator<=>(const BucketId&) const = default;
};

struct HashFamilyConfig {
  HashFamily family = HashFamily::vq;
  HashDomain domain = HashDomain::gbh;
  std::uint32_t M = 1;
  std::uint32_t n = 1;
  std::uint32_t input_dim = 1;
  std::uint64_t seed = 0;

  std::uint64_t buckets() const noexcept { return std::uint64_t{1} << n; }

  void validate() const {
    if (M < 1) throw Error(Errc::invalid_argument, "M must be at least 1");
    if (n < 1 || n > kMaxHashBits) throw Error(Errc::invalid_argument, "n must be in [1, 24]");
    if (input_dim < 1) throw Error(Errc::invalid_argument, "input_dim must be positive");
    if (static_cast<std::uint8_t>(family) > 3 || static_cast<std::uint8_t>(domain) > 1) {
      throw Error(Errc::invalid_argument, "unknown hash family or domain");
    }
  }

  /// VBH hashes whole K*d Fisher vectors; GBH hashes d-dimensional chunks.
  void check_domain(std::size_t components, std::size_t d) const {
    const std::size_t want = domain == HashDomain::vbh ? components * d : d;
    if (input_dim != want) {
      throw Error(Errc::dimension_mismatch, std::string(to_string(domain)) + " hash expects input_dim " +
                                                std::to_string(want) + ", bank has " + std::to_string(input_dim));
    }
  }

  bool operator==(const HashFamilyConfig&) const = default;
};

/// n sign tests packed little-endian into a bucket id.
struct HyperplaneHash {
  HashFamily family = HashFamily::lsh_c;
  std::uint32_t input_dim = 0;
  std::vector<double> planes;           // n x input_dim (LSH_C, LSH_S)
  std::vector<std::uint32_t> indices;   // n coordinates (LSH_B)

  std::uint32_t bits() const noexcept {
    return static_cast<std::uint32_t>(family == HashFamily::lsh_b ? indices.size() : planes.size() / input_dim);
  }

  BucketId operator()(std::span<const double> v) const {
    if (v.size() != input_dim) throw Error(Errc::dimension_mismatch, "hash input has wrong dimension");
    std::uint32_t bucket = 0;
    const std::uint32_t n = bits();
    for (std::uint32_t i = 0; i < n; ++i) {
      bool bit;
      if (family == HashFamily::lsh_b) {
        bit = v[indices[i]] >= 0.0;
      } else {
        bit = dot({planes.data() + std::size_t{i} * input_dim, input_dim}, v) >= 0.0;
      }
      bucket |= static_cast<std::uint32_t>(bit) << i;
    }
    return {bucket};
  }

  bool operator==(const HyperplaneHash&) const = default;
};

/// Nearest-centroid hash; ties go to the lowest index.
struct VqHash {
  Matrix centroids;  // 2^n x input_dim

  BucketId operator()(std::span<const double> v) const {
    if (v.size() != centroids.cols()) throw Error(Errc::dimension_mismatch, "hash input has wrong dimension");
    return {static_cast<std::uint32_t>(nearest_row(centroids, v))};
  }

  bool operator==(const VqHash&) const = default;
};

/// M hash functions of one family. Exactly one of `hyperplanes` and
/// `quantizers` is populated.
struct HashBank {
  HashFamilyConfig config;
  std::vector<HyperplaneHash> hyperplanes;
  std::vector<VqHash> quantizers;

  std::size_t size() const noexcept { return config.M; }

  BucketId hash(std::size_t m, std::span<const double> v) const {
    return config.family == HashFamily::vq ? quantizers[m](v) : hyperplanes[m](v);
  }

  bool operator==(const HashBank&) const = default;
};

inline HyperplaneHash sample_hyperplane_hash(const HashFamilyConfig& cfg, std::uint32_t m) {
  HyperplaneHash h;
  h.family = cfg.family;
  h.input_dim = cfg.input_dim;
  if (cfg.family == HashFamily::lsh_b) {
    // Distinct coordinates while they last; a fresh permutation per pass.
    CounterRng rng(cfg.seed, m);
    std::vector<std::uint32_t> perm(cfg.input_dim);
    while (h.indices.size() < cfg.n) {
      std::iota(perm.begin(), perm.end(), 0u);
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      for (std::uint32_t idx : perm) {
        if (h.indices.size() == cfg.n) break;
        h.indices.push_back(idx);
      }
    }
    return h;
  }
  h.planes.resize(std::size_t{cfg.n} * cfg.input_dim);
  for (std::uint32_t row = 0; row < cfg.n; ++row) {
    CounterRng rng(cfg.seed, m, row);
    double* p = h.planes.data() + std::size_t{row} * cfg.input_dim;
    for (std::uint32_t j = 0; j < cfg.input_dim; ++j) {
      if (cfg.family == HashFamily::lsh_c) {
        p[j] = static_cast<float>(rng.normal());
      } else {
        p[j] = (rng.next() >> 63) ? 1.0 : -1.0;
      }
    }
  }
  return h;
}

inline HashBank sample_hash_bank(const HashFamilyConfig& cfg) {
  cfg.validate();
  if (cfg.family == HashFamily::vq) throw Error(Errc::unsupported, "VQ banks are trained, not sampled");
  HashBank bank{cfg, {}, {}};
  bank.hyperplanes.reserve(cfg.M);
  for (std::uint32_t m = 0; m < cfg.M; ++m) bank.hyperplanes.push_back(sample_hyperplane_hash(cfg, m));
  return bank;
}

// Banks hold float32-representable values so a bank hashes identically
// before and after a file round trip.
inline void round_to_float(Matrix& m) {
  for (double& v : m.data()) v = static_cast<float>(v);
}

struct VqTrainingReport {
  struct Fallback {
    std::uint32_t hash_index;
    std::size_t points;
  };
  std::vector<Fallback> fallbacks;  // partitions with fewer than 2^n points
};

struct VqTrainingResult {
  HashBank bank;
  VqTrainingReport report;
};

/// Trains M quantizers. With one partition every hash trains on it (VBH);
/// otherwise hash m trains on partition m (GBH: residuals of Gaussian m).
inline VqTrainingResult train_vq_bank(std::span<const Matrix> partitions, const HashFamilyConfig& cfg) {
  cfg.validate();
  if (cfg.family != HashFamily::vq) throw Error(Errc::unsupported, "train_vq_bank requires the VQ family");
  if (partitions.size() != 1 && partitions.size() != cfg.M) {
    throw Error(Errc::invalid_argument, "expected 1 or M training partitions");
  }
  Matrix pooled(0, cfg.input_dim);
  for (const auto& p : partitions) {
    if (p.cols() != cfg.input_dim && p.rows() > 0) throw Error(Errc::dimension_mismatch, "training partition dimension");
    for (std::size_t i = 0; i < p.rows(); ++i) pooled.append_row(p.row(i));
  }
  if (pooled.rows() == 0) throw Error(Errc::insufficient_data, "no VQ training data");

  const std::size_t k = cfg.buckets();
  VqTrainingResult result{{cfg, {}, {}}, {}};
  result.bank.quantizers.reserve(cfg.M);
  for (std::uint32_t m = 0; m < cfg.M; ++m) {
    const Matrix& own = partitions.size() == 1 ? partitions[0] : partitions[m];
    CounterRng rng(cfg.seed, m, 0x5651);
    if (own.rows() >= k) {
      Matrix c = kmeans(own, k, rng, kVqIterations);
      round_to_float(c);
      result.bank.quantizers.push_back({std::move(c)});
      continue;
    }
    // Too few points: resample with replacement and jitter.
    const Matrix& src = own.rows() > 0 ? own : pooled;
    result.report.fallbacks.push_back({m, own.rows()});
    std::vector<double> scale(cfg.input_dim, 0.0);
    {
      std::vector<double> mean(cfg.input_dim, 0.0);
      for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < cfg.input_dim; ++j) mean[j] += src(i, j);
      for (double& v : mean) v /= static_cast<double>(src.rows());
      for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < cfg.input_dim; ++j) scale[j] += (src(i, j) - mean[j]) * (src(i, j) - mean[j]);
      for (double& v : scale) v = 0.01 * std::sqrt(v / static_cast<double>(src.rows())) + 1e-6;
    }
    Matrix c(k, cfg.input_dim);
    for (std::size_t row = 0; row < k; ++row) {
      const std::size_t pick = static_cast<std::size_t>(rng.below(src.rows()));
      for (std::size_t j = 0; j < cfg.input_dim; ++j) c(row, j) = src(pick, j) + scale[j] * rng.normal();
    }
    round_to_float(c);
    result.bank.quantizers.push_back({std::move(c)});
  }
  return result;
}

/// Splits a K*d Fisher vector into K chunks of length d.
inline std::vector<std::vector<double>> gbh_chunks(std::span<const double> fv, std::size_t components, std::size_t d) {
  if (fv.size() != components * d) throw Error(Errc::dimension_mismatch, "FV length is not K*d");
  std::vector<std::vector<double>> out;
  out.reserve(components);
  for (std::size_t k = 0; k < components; ++k) out.emplace_back(fv.begin() + k * d, fv.begin() + (k + 1) * d);
  return out;
}

// QIVH: magic, version, family u8, domain u8, M u32, n u8, input_dim u32,
// seed u64, then per-hash payload.
inline void write_hash_bank(std::ostream& out, const HashBank& bank) {
  const auto& c = bank.config;
  BinaryWriter w(out);
  w.magic("QIVH");
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(c.family));
  w.u8(static_cast<std::uint8_t>(c.domain));
  w.u32(c.M);
  w.u8(static_cast<std::uint8_t>(c.n));
  w.u32(c.input_dim);
  w.u64(c.seed);
  for (std::uint32_t m = 0; m < c.M; ++m) {
    if (c.family == HashFamily::vq) {
      for (double v : bank.quantizers[m].centroids.data()) w.f32(v);
    } else if (c.family == HashFamily::lsh_b) {
      for (std::uint32_t idx : bank.hyperplanes[m].indices) w.u32(idx);
    } else {
      for (double v : bank.hyperplanes[m].planes) w.f32(v);
    }
  }
}

inline HashBank read_hash_bank(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic("QIVH");
  r.expect_version();
  HashFamilyConfig c;
  c.family = static_cast<HashFamily>(r.u8());
  c.domain = static_cast<HashDomain>(r.u8());
  c.M = r.u32();
  c.n = r.u8();
  c.input_dim = r.u32();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::format, e.what());
  }
  HashBank bank{c, {}, {}};
  for (std::uint32_t m = 0; m < c.M; ++m) {
    if (c.family == HashFamily::vq) {
      Matrix cent(c.buckets(), c.input_dim);
      for (double& v : cent.data()) v = r.f32();
      bank.quantizers.push_back({std::move(cent)});
    } else {
      HyperplaneHash h;
      h.family = c.family;
      h.input_dim = c.input_dim;
      if (c.family == HashFamily::lsh_b) {
        h.indices.resize(c.n);
        for (auto& idx : h.indices) {
          idx = r.u32();
          if (idx >= c.input_dim) throw Error(Errc::format, "LSH-B coordinate out of range");
        }
      } else {
        h.planes.resize(std::size_t{c.n} * c.input_dim);
        for (double& v : h.planes) v = r.f32();
      }
      bank.hyperplanes.push_back(std::move(h));
    }
  }
  return bank;
}

}  // namespace qbiv
