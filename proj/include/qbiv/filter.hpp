#pragma once

/// Partitioned and non-partitioned Bloom filters over hash bucket ids.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "qbiv/binary_io.hpp"
#include "qbiv/core.hpp"
#include "qbiv/hashing.hpp"

namespace qbiv {

struct FilterConfig {
  bool partitioned = true;
  std::uint32_t M = 1;
  std::uint64_t L_p = 0;   // bits per partition
  std::uint64_t L_np = 0;  // total bits when not partitioned

  static FilterConfig make_partitioned(std::uint32_t m, std::uint64_t lp) { return {true, m, lp, 0}; }
  static FilterConfig make_non_partitioned(std::uint32_t m, std::uint64_t lnp) { return {false, m, 0, lnp}; }

  /// Hash bucket range: each hash addresses L_p bits (partitioned) or all L_np.
  std::uint64_t range() const noexcept { return partitioned ? L_p : L_np; }

  void validate() const {
    if (M < 1) throw Error(Errc::invalid_argument, "filter needs M >= 1");
    if (range() == 0) throw Error(Errc::invalid_argument, "filter length must be positive");
  }

  /// Bit address of bucket `b` produced by hash `m`.
  std::uint64_t address(std::uint32_t m, BucketId b) const {
    if (m >= M) throw Error(Errc::out_of_range, "hash index " + std::to_string(m) + " >= M");
    if (b.value >= range()) throw Error(Errc::out_of_range, "bucket " + std::to_string(b.value) + " out of range");
    return partitioned ? std::uint64_t{m} * L_p + b.value : b.value;
  }

  bool operator==(const FilterConfig&) const = default;
};

inline std::uint64_t bit_budget(const FilterConfig& cfg) { return cfg.partitioned ? cfg.L_p * cfg.M : cfg.L_np; }

/// Insert-only bit array with a cached popcount.
class SceneFilter {
 public:
  SceneFilter(std::string scene_id, const FilterConfig& cfg)
      : scene_id_(std::move(scene_id)), config_(cfg), words_((bit_budget(cfg) + 63) / 64, 0) {
    cfg.validate();
  }

  const std::string& scene_id() const noexcept { return scene_id_; }
  const FilterConfig& config() const noexcept { return config_; }
  std::uint64_t popcount() const noexcept { return popcount_; }
  std::uint64_t size_bits() const noexcept { return bit_budget(config_); }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  void set(std::uint64_t address) {
    if (address >= size_bits()) throw Error(Errc::out_of_range, "bit address out of range");
    std::uint64_t& w = words_[address >> 6];
    const std::uint64_t mask = std::uint64_t{1} << (address & 63);
    if ((w & mask) == 0) {
      w |= mask;
      ++popcount_;
    }
  }

  bool test(std::uint64_t address) const {
    if (address >= size_bits()) throw Error(Errc::out_of_range, "bit address out of range");
    return (words_[address >> 6] >> (address & 63)) & 1;
  }

  /// Sets bit h_m(x) for every m; `buckets` holds one bucket per hash.
  void insert(std::span<const BucketId> buckets) {
    check_arity(buckets);
    for (std::uint32_t m = 0; m < buckets.size(); ++m) config_.address(m, buckets[m]);  // validate first
    for (std::uint32_t m = 0; m < buckets.size(); ++m) set(config_.address(m, buckets[m]));
  }

  bool query_membership(std::span<const BucketId> buckets) const {
    check_arity(buckets);
    bool all = true;
    for (std::uint32_t m = 0; m < buckets.size(); ++m) all = test(config_.address(m, buckets[m])) && all;
    return all;
  }

  /// Replaces the bit array wholesale (deserialization).
  void assign_words(std::vector<std::uint64_t> words) {
    if (words.size() != words_.size()) throw Error(Errc::format, "filter word count mismatch");
    words_ = std::move(words);
    const std::uint64_t tail = size_bits() & 63;
    if (tail != 0 && (words_.back() >> tail) != 0) throw Error(Errc::format, "bits set beyond filter length");
    popcount_ = 0;
    for (auto w : words_) popcount_ += static_cast<std::uint64_t>(std::popcount(w));
  }

  bool operator==(const SceneFilter&) const = default;

 private:
  void check_arity(std::span<const BucketId> buckets) const {
    if (buckets.size() != config_.M) throw Error(Errc::invalid_argument, "expected one bucket per hash function");
  }

  std::string scene_id_;
  FilterConfig config_;
  std::vector<std::uint64_t> words_;
  std::uint64_t popcount_ = 0;
};

inline void write_filter_config(BinaryWriter& w, const FilterConfig& c) {
  w.u8(c.partitioned ? 1 : 0);
  w.u32(c.M);
  w.u64(c.L_p);
  w.u64(c.L_np);
}

inline FilterConfig read_filter_config(BinaryReader& r) {
  FilterConfig c;
  const std::uint8_t p = r.u8();
  if (p > 1) throw Error(Errc::format, "bad partitioned flag");
  c.partitioned = p == 1;
  c.M = r.u32();
  c.L_p = r.u64();
  c.L_np = r.u64();
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::format, e.what());
  }
  return c;
}

// QIVB: magic, version, FilterConfig, scene count u32, per scene id (u16 + bytes)
// and packed little-endian u64 words.
inline void write_filter_set(std::ostream& out, const FilterConfig& cfg, std::span<const SceneFilter> filters) {
  BinaryWriter w(out);
  w.magic("QIVB");
  w.u32(kFormatVersion);
  write_filter_config(w, cfg);
  w.u32(static_cast<std::uint32_t>(filters.size()));
  for (const auto& f : filters) {
    if (!(f.config() == cfg)) throw Error(Errc::invalid_argument, "filter config differs from set config");
    w.short_string(f.scene_id());
    for (auto word : f.words()) w.u64(word);
  }
}

struct FilterSet {
  FilterConfig config;
  std::vector<SceneFilter> filters;
};

inline FilterSet read_filter_set(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic("QIVB");
  r.expect_version();
  FilterSet set{read_filter_config(r), {}};
  const std::uint32_t count = r.u32();
  const std::uint64_t words = (bit_budget(set.config) + 63) / 64;
  for (std::uint32_t i = 0; i < count; ++i) {
    SceneFilter f(r.short_string(), set.config);
    std::vector<std::uint64_t> bits(words);
    for (auto& w : bits) w = r.u64();
    f.assign_words(std::move(bits));
    set.filters.push_back(std::move(f));
  }
  return set;
}

}  // namespace qbiv
