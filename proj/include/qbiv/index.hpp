#pragma once

/// Scene indexes for query-by-image retrieval. Every frame (BF-GD) or every
/// local descriptor (BF-PI) of a scene is hashed into the scene's Bloom
/// filter; the set bits of all filters are kept as an inverted index from bit
/// address to scene ordinals, which is what query scoring traverses.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "qbiv/binary_io.hpp"
#include "qbiv/core.hpp"
#include "qbiv/embedding.hpp"
#include "qbiv/filter.hpp"
#include "qbiv/hashing.hpp"

namespace qbiv {

enum class Pipeline : std::uint8_t { bf_gd = 0, bf_pi = 1 };

inline const char* to_string(Pipeline p) { return p == Pipeline::bf_gd ? "bf_gd" : "bf_pi"; }

struct FrameRef {
  std::string frame_id;
  std::string path;
  std::string shot_id;  // empty when the manifest has no shot column
};

struct SceneRecord {
  std::string scene_id;
  std::vector<FrameRef> frames;
};

template <class L>
concept DescriptorLoader = requires(L& load, const FrameRef& f) {
  { load(f) } -> std::convertible_to<DescriptorSet>;
};

struct ModelFingerprints {
  Digest pca{};
  Digest gmm{};
  Digest bank{};

  bool operator==(const ModelFingerprints&) const = default;
};

/// The trained models a pipeline runs with, plus content digests of their
/// serialized form. Immutable once constructed.
class ModelSet {
 public:
  ModelSet(PcaModel pca, DiagonalGmm gmm, HashBank bank)
      : pca_(std::move(pca)), gmm_(std::move(gmm)), bank_(std::move(bank)) {
    if (pca_.d_out() != gmm_.dim()) throw Error(Errc::dimension_mismatch, "PCA output does not match GMM dimension");
    bank_.config.check_domain(gmm_.components(), gmm_.dim());
    fingerprints_.pca = sha256(to_bytes(pca_, [](std::ostream& o, const PcaModel& m) { write_model(o, m); }));
    fingerprints_.gmm = sha256(to_bytes(gmm_, [](std::ostream& o, const DiagonalGmm& g) { write_model(o, g); }));
    fingerprints_.bank = sha256(to_bytes(bank_, write_hash_bank));
  }

  const PcaModel& pca() const noexcept { return pca_; }
  const DiagonalGmm& gmm() const noexcept { return gmm_; }
  const HashBank& bank() const noexcept { return bank_; }
  const ModelFingerprints& fingerprints() const noexcept { return fingerprints_; }

 private:
  PcaModel pca_;
  DiagonalGmm gmm_;
  HashBank bank_;
  ModelFingerprints fingerprints_;
};

/// Filter layout matching a bank: one partition of 2^n bits per hash, or a
/// single shared 2^n-bit array.
inline FilterConfig filter_config_for(const HashFamilyConfig& hc, bool partitioned) {
  return partitioned ? FilterConfig::make_partitioned(hc.M, hc.buckets())
                     : FilterConfig::make_non_partitioned(hc.M, hc.buckets());
}

inline void check_pipeline(Pipeline pipeline, const ModelSet& models, const FilterConfig& cfg) {
  const auto& hc = models.bank().config;
  if (cfg.M != hc.M) throw Error(Errc::dimension_mismatch, "filter M differs from bank M");
  if (cfg.range() != hc.buckets()) throw Error(Errc::dimension_mismatch, "filter length differs from 2^n");
  const bool needs_gbh_pairing = pipeline == Pipeline::bf_pi || hc.domain == HashDomain::gbh;
  if (pipeline == Pipeline::bf_pi && hc.domain != HashDomain::gbh) {
    throw Error(Errc::invalid_argument, "BF-PI requires Gaussian-based hashing");
  }
  if (needs_gbh_pairing && hc.M != models.gmm().components()) {
    throw Error(Errc::invalid_argument, "Gaussian-based hashing requires M = K");
  }
}

/// Bit addresses a frame or query image sets/probes. BF-GD: one per hash
/// function. BF-PI: one per local descriptor.
inline std::vector<std::uint64_t> embed_addresses(Pipeline pipeline, const ModelSet& models, const FilterConfig& cfg,
                                                  const DescriptorSet& raw) {
  const DescriptorSet x = apply_pca(models.pca(), raw);
  const auto& bank = models.bank();
  const std::size_t d = models.gmm().dim();
  std::vector<std::uint64_t> out;
  if (pipeline == Pipeline::bf_gd) {
    const FisherVector fv = compute_fv(models.gmm(), x, true);
    out.reserve(bank.size());
    for (std::uint32_t m = 0; m < bank.size(); ++m) {
      std::span<const double> input = fv.values;
      if (bank.config.domain == HashDomain::gbh) input = input.subspan(std::size_t{m} * d, d);
      out.push_back(cfg.address(m, bank.hash(m, input)));
    }
  } else {
    out.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto t = point_index(models.gmm(), x[i]);
      out.push_back(cfg.address(t.gaussian, bank.hash(t.gaussian, t.residual)));
    }
  }
  return out;
}

/// IDF weights enter both the TF-IDF numerator and normalizer squared.
inline double idf_term(double w) { return w * w; }

/// Per-slot IDF weights aligned with InvertedIndex::addresses, plus the
/// per-scene sum of squared weights over the scene's set bits.
struct IdfWeights {
  std::vector<double> weight;
  std::vector<double> scene_norm;
};

struct InvertedIndex {
  Pipeline pipeline = Pipeline::bf_gd;
  FilterConfig filter;
  HashFamilyConfig hashing;
  ModelFingerprints fingerprints;
  std::vector<std::string> scenes;
  std::vector<std::uint64_t> addresses;                // sorted, unique
  std::vector<std::vector<std::uint32_t>> postings;    // ascending scene ordinals
  std::vector<std::uint32_t> setbits;                  // per scene
  IdfWeights idf;                                      // cached at seal time, float32 precision

  std::optional<std::size_t> find(std::uint64_t address) const {
    auto it = slot_.find(address);
    if (it == slot_.end()) return std::nullopt;
    return it->second;
  }

  /// Rebuilds the scene's Bloom filter from postings.
  SceneFilter materialize(std::uint32_t ordinal) const {
    SceneFilter f(scenes.at(ordinal), filter);
    for (std::size_t s = 0; s < addresses.size(); ++s) {
      if (std::binary_search(postings[s].begin(), postings[s].end(), ordinal)) f.set(addresses[s]);
    }
    return f;
  }

  /// Derives lookup tables and set-bit counts from the postings. Does not
  /// touch `idf`.
  void rebuild_lookup() {
    slot_.clear();
    slot_.reserve(addresses.size());
    setbits.assign(scenes.size(), 0);
    for (std::size_t s = 0; s < addresses.size(); ++s) {
      slot_.emplace(addresses[s], s);
      for (auto v : postings[s]) ++setbits[v];
    }
  }

 private:
  std::unordered_map<std::uint64_t, std::size_t> slot_;
};

/// Completes per-scene normalizers for a set of per-slot weights.
inline IdfWeights make_idf(const InvertedIndex& index, std::vector<double> weight) {
  IdfWeights w{std::move(weight), std::vector<double>(index.scenes.size(), 0.0)};
  for (std::size_t s = 0; s < index.addresses.size(); ++s) {
    const double sq = idf_term(w.weight[s]);
    for (auto v : index.postings[s]) w.scene_norm[v] += sq;
  }
  return w;
}

/// w_l = ln((V + 1) / (df_l + 1)) + 1 for every observed bucket.
inline IdfWeights compute_idf(const InvertedIndex& index) {
  const double v = static_cast<double>(index.scenes.size());
  std::vector<double> weight(index.addresses.size());
  for (std::size_t s = 0; s < weight.size(); ++s) {
    const double df = static_cast<double>(index.postings[s].size());
    weight[s] = std::log((v + 1.0) / (df + 1.0)) + 1.0;
  }
  return make_idf(index, std::move(weight));
}

inline IdfWeights uniform_idf(const InvertedIndex& index) {
  return make_idf(index, std::vector<double>(index.addresses.size(), 1.0));
}

/// Weight of a bit address; unobserved addresses weigh 0.
inline double idf_weight(const InvertedIndex& index, const IdfWeights& idf, std::uint64_t address) {
  const auto s = index.find(address);
  return s ? idf.weight[*s] : 0.0;
}

inline void seal(InvertedIndex& index) {
  index.rebuild_lookup();
  auto idf = compute_idf(index);
  for (double& w : idf.weight) w = static_cast<float>(w);
  index.idf = make_idf(index, std::move(idf.weight));
}

struct BuildReport {
  std::size_t scenes = 0;
  std::size_t frames = 0;
  std::size_t descriptors = 0;
  std::size_t empty_frames = 0;
  std::vector<std::uint32_t> setbits;
};

struct BuildResult {
  InvertedIndex index;
  BuildReport report;
  std::vector<SceneFilter> filters;  // only when requested
};

template <DescriptorLoader Loader>
BuildResult build_index(Pipeline pipeline, std::span<const SceneRecord> scenes, Loader&& load, const ModelSet& models,
                        const FilterConfig& cfg, bool keep_filters = false) {
  if (scenes.empty()) throw Error(Errc::empty_input, "no scenes to index");
  check_pipeline(pipeline, models, cfg);

  BuildResult out;
  auto& index = out.index;
  index.pipeline = pipeline;
  index.filter = cfg;
  index.hashing = models.bank().config;
  index.fingerprints = models.fingerprints();

  std::unordered_set<std::string> seen;
  std::vector<std::pair<std::uint64_t, std::uint32_t>> pairs;  // (address, ordinal)
  for (std::uint32_t ordinal = 0; ordinal < scenes.size(); ++ordinal) {
    const auto& scene = scenes[ordinal];
    if (!seen.insert(scene.scene_id).second) throw Error(Errc::invalid_argument, "duplicate scene id " + scene.scene_id);
    index.scenes.push_back(scene.scene_id);
    SceneFilter filter(scene.scene_id, cfg);
    for (const auto& frame : scene.frames) {
      const DescriptorSet raw = load(frame);
      ++out.report.frames;
      if (raw.empty()) {
        ++out.report.empty_frames;
        continue;
      }
      out.report.descriptors += raw.size();
      for (auto a : embed_addresses(pipeline, models, cfg, raw)) filter.set(a);
    }
    const auto words = filter.words();
    for (std::size_t w = 0; w < words.size(); ++w) {
      for (std::uint64_t bits = words[w]; bits != 0; bits &= bits - 1) {
        pairs.emplace_back(w * 64 + static_cast<std::uint64_t>(std::countr_zero(bits)), ordinal);
      }
    }
    if (keep_filters) out.filters.push_back(std::move(filter));
  }
  std::sort(pairs.begin(), pairs.end());
  for (const auto& [address, ordinal] : pairs) {
    if (index.addresses.empty() || index.addresses.back() != address) {
      index.addresses.push_back(address);
      index.postings.emplace_back();
    }
    index.postings.back().push_back(ordinal);
  }
  seal(index);
  out.report.scenes = index.scenes.size();
  out.report.setbits = index.setbits;
  return out;
}

template <DescriptorLoader Loader>
BuildResult build_bf_gd(std::span<const SceneRecord> scenes, Loader&& load, const ModelSet& models,
                        const FilterConfig& cfg, bool keep_filters = false) {
  return build_index(Pipeline::bf_gd, scenes, std::forward<Loader>(load), models, cfg, keep_filters);
}

template <DescriptorLoader Loader>
BuildResult build_bf_pi(std::span<const SceneRecord> scenes, Loader&& load, const ModelSet& models,
                        const FilterConfig& cfg, bool keep_filters = false) {
  return build_index(Pipeline::bf_pi, scenes, std::forward<Loader>(load), models, cfg, keep_filters);
}

// ---------------------------------------------------------------------------
// Scoring

enum class ScoringMode : std::uint8_t { hash_matches = 0, tfidf = 1 };

struct ScoringConfig {
  ScoringMode mode = ScoringMode::hash_matches;
  double alpha = 0.5;
};


struct RankedScene {
  std::uint32_t ordinal = 0;
  std::string scene_id;
  double score = 0.0;
};

struct QueryResult {
  std::vector<RankedScene> ranking;
  double latency_seconds = 0.0;
};

/// Ordinals sorted by descending score, ties by ascending ordinal. top_k = 0
/// keeps everything.
inline std::vector<std::uint32_t> rank_ties(std::span<const double> scores, std::size_t top_k = 0) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  const auto before = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  const std::size_t k = (top_k == 0 || top_k > order.size()) ? order.size() : top_k;
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  order.resize(k);
  return order;
}

/// Scene scores for a list of probed bit addresses. Touches only the
/// posting lists of probed addresses.
inline std::vector<double> accumulate_scores(const InvertedIndex& index, const IdfWeights& idf,
                                             const ScoringConfig& scoring, std::span<const std::uint64_t> probes) {
  std::vector<double> scores(index.scenes.size(), 0.0);
  for (auto a : probes) {
    const auto s = index.find(a);
    if (!s) continue;
    const double inc = scoring.mode == ScoringMode::hash_matches ? 1.0 : idf_term(idf.weight[*s]);
    for (auto v : index.postings[*s]) scores[v] += inc;
  }
  if (scoring.mode == ScoringMode::tfidf) {
    for (std::size_t v = 0; v < scores.size(); ++v) {
      if (scores[v] != 0.0) scores[v] /= std::pow(idf.scene_norm[v], scoring.alpha);
    }
  }
  return scores;
}

inline QueryResult score_probes(const InvertedIndex& index, const IdfWeights& idf, const ScoringConfig& scoring,
                                std::span<const std::uint64_t> probes, std::size_t top_k) {
  const auto scores = accumulate_scores(index, idf, scoring, probes);
  QueryResult result;
  for (auto v : rank_ties(scores, top_k)) result.ranking.push_back({v, index.scenes[v], scores[v]});
  return result;
}

inline void check_fingerprints(const InvertedIndex& index, const ModelSet& models) {
  if (!(index.fingerprints == models.fingerprints())) {
    throw Error(Errc::fingerprint_mismatch, "models differ from those the index was built with");
  }
}

/// Embeds the query exactly like an indexed frame, then scores. Latency
/// covers scoring only unless `end_to_end` is set.
inline QueryResult score_query(const InvertedIndex& index, const IdfWeights& idf, const ScoringConfig& scoring,
                               const DescriptorSet& query, const ModelSet& models, std::size_t top_k,
                               bool end_to_end = false) {
  if (query.empty()) throw Error(Errc::empty_input, "query has no descriptors");
  check_fingerprints(index, models);
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const auto probes = embed_addresses(index.pipeline, models, index.filter, query);
  const auto t1 = Clock::now();
  QueryResult result = score_probes(index, idf, scoring, probes, top_k);
  const auto t2 = Clock::now();
  result.latency_seconds = std::chrono::duration<double>(t2 - (end_to_end ? t0 : t1)).count();
  return result;
}

// ---------------------------------------------------------------------------
// QIVI index file

inline void write_hash_config(BinaryWriter& w, const HashFamilyConfig& c) {
  w.u8(static_cast<std::uint8_t>(c.family));
  w.u8(static_cast<std::uint8_t>(c.domain));
  w.u32(c.M);
  w.u8(static_cast<std::uint8_t>(c.n));
  w.u32(c.input_dim);
  w.u64(c.seed);
}

inline HashFamilyConfig read_hash_config(BinaryReader& r) {
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
  return c;
}

inline void write_index(std::ostream& out, const InvertedIndex& index) {
  if (index.filter.M > 0xFFFF) throw Error(Errc::format, "index format supports M <= 65535");
  BinaryWriter w(out);
  w.magic("QIVI");
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(index.pipeline));
  write_filter_config(w, index.filter);
  write_hash_config(w, index.hashing);
  for (const Digest* d : {&index.fingerprints.pca, &index.fingerprints.gmm, &index.fingerprints.bank}) {
    w.bytes({reinterpret_cast<const char*>(d->data()), d->size()});
  }
  w.u32(static_cast<std::uint32_t>(index.scenes.size()));
  for (const auto& s : index.scenes) w.short_string(s);
  w.u64(index.addresses.size());
  const std::uint64_t lp = index.filter.partitioned ? index.filter.L_p : index.filter.L_np;
  for (std::size_t s = 0; s < index.addresses.size(); ++s) {
    const std::uint64_t a = index.addresses[s];
    w.u16(static_cast<std::uint16_t>(index.filter.partitioned ? a / lp : 0));
    w.u32(static_cast<std::uint32_t>(index.filter.partitioned ? a % lp : a));
    const auto& list = index.postings[s];
    w.u32(static_cast<std::uint32_t>(list.size()));
    std::uint32_t prev = 0;
    for (std::size_t i = 0; i < list.size(); ++i) {
      w.varint(i == 0 ? list[i] : list[i] - prev);
      prev = list[i];
    }
  }
  for (double v : index.idf.weight) w.f32(v);
}

inline InvertedIndex read_index(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic("QIVI");
  r.expect_version();
  InvertedIndex index;
  const std::uint8_t p = r.u8();
  if (p > 1) throw Error(Errc::format, "unknown pipeline tag");
  index.pipeline = static_cast<Pipeline>(p);
  index.filter = read_filter_config(r);
  index.hashing = read_hash_config(r);
  for (Digest* d : {&index.fingerprints.pca, &index.fingerprints.gmm, &index.fingerprints.bank}) {
    const std::string raw = r.bytes(d->size());
    std::copy(raw.begin(), raw.end(), d->begin());
  }
  const std::uint32_t scene_count = r.u32();
  for (std::uint32_t i = 0; i < scene_count; ++i) index.scenes.push_back(r.short_string());
  const std::uint64_t lists = r.u64();
  const FilterConfig& fc = index.filter;
  for (std::uint64_t s = 0; s < lists; ++s) {
    const std::uint16_t m = r.u16();
    const std::uint32_t bucket = r.u32();
    const std::uint64_t address = fc.address(m, BucketId{bucket});
    if (!index.addresses.empty() && address <= index.addresses.back()) throw Error(Errc::format, "postings out of order");
    index.addresses.push_back(address);
    const std::uint32_t count = r.u32();
    std::vector<std::uint32_t> list;
    list.reserve(count);
    std::uint64_t acc = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint64_t delta = r.varint();
      if (i > 0 && delta == 0) throw Error(Errc::format, "duplicate ordinal in posting list");
      acc = i == 0 ? delta : acc + delta;
      if (acc >= scene_count) throw Error(Errc::format, "posting ordinal out of range");
      list.push_back(static_cast<std::uint32_t>(acc));
    }
    index.postings.push_back(std::move(list));
  }
  std::vector<double> weight(lists);
  for (double& v : weight) v = r.f32();
  index.rebuild_lookup();
  index.idf = make_idf(index, std::move(weight));
  return index;
}

inline std::uint64_t serialized_size(const InvertedIndex& index) { return to_bytes(index, write_index).size(); }

}  // namespace qbiv
