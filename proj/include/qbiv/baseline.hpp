#pragma once

/// Binarized Fisher vector (FV*) baselines: one sign-bit signature per scene,
/// shot or frame, ranked by exhaustive Hamming scan, plus shot-level
/// re-ranking of a scene shortlist.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qbiv/binary_io.hpp"
#include "qbiv/core.hpp"
#include "qbiv/embedding.hpp"
#include "qbiv/index.hpp"

namespace qbiv {

enum class Granularity : std::uint8_t { scene = 0, shot = 1, frame = 2 };

struct BinarizedFv {
  std::string owner_id;
  Granularity granularity = Granularity::scene;
  std::size_t bit_count = 0;
  std::vector<std::uint64_t> words;

  bool bit(std::size_t i) const { return (words[i >> 6] >> (i & 63)) & 1; }
  bool operator==(const BinarizedFv&) const = default;
};

/// Bit i is 1 iff component i >= 0.
inline BinarizedFv binarize_fv(const FisherVector& fv, std::string owner = {},
                               Granularity granularity = Granularity::scene) {
  if (!all_finite(fv.values)) throw Error(Errc::non_finite, "cannot binarize a non-finite FV");
  BinarizedFv b{std::move(owner), granularity, fv.size(), std::vector<std::uint64_t>((fv.size() + 63) / 64, 0)};
  for (std::size_t i = 0; i < fv.size(); ++i) {
    if (fv.values[i] >= 0.0) b.words[i >> 6] |= std::uint64_t{1} << (i & 63);
  }
  return b;
}

inline std::size_t hamming_distance(const BinarizedFv& a, const BinarizedFv& b) {
  if (a.bit_count != b.bit_count) throw Error(Errc::dimension_mismatch, "binarized FVs differ in length");
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) d += static_cast<std::size_t>(std::popcount(a.words[w] ^ b.words[w]));
  return d;
}

/// Scene that owns a shot/frame entry; ids are "scene<TAB>child".
inline std::string_view parent_scene(std::string_view owner_id) { return owner_id.substr(0, owner_id.find('\t')); }

struct FvStarDatabase {
  Granularity granularity = Granularity::scene;
  std::uint32_t K = 0;
  std::uint32_t d = 0;
  std::vector<BinarizedFv> entries;
  std::size_t skipped = 0;  // owners with no descriptors (not serialized)

  bool operator==(const FvStarDatabase& o) const {
    return granularity == o.granularity && K == o.K && d == o.d && entries == o.entries;
  }
};

namespace detail {

inline void append_rows(Matrix& dst, const DescriptorSet& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst.append_row(src[i]);
}

template <class Loader, class KeyFn>
FvStarDatabase build_fv_star(std::span<const SceneRecord> scenes, Loader& load, const DiagonalGmm& gmm,
                             const PcaModel& pca, Granularity granularity, KeyFn key) {
  FvStarDatabase db{granularity, static_cast<std::uint32_t>(gmm.components()), static_cast<std::uint32_t>(gmm.dim()), {}, 0};
  for (const auto& scene : scenes) {
    // Group frames by owner in first-appearance order.
    std::vector<std::string> order;
    std::map<std::string, Matrix> pooled;
    for (const auto& frame : scene.frames) {
      const std::string owner = key(scene, frame);
      auto [it, fresh] = pooled.try_emplace(owner, Matrix(0, pca.d_out()));
      if (fresh) order.push_back(owner);
      const DescriptorSet raw = load(frame);
      if (!raw.empty()) append_rows(it->second, apply_pca(pca, raw));
    }
    if (scene.frames.empty()) {
      ++db.skipped;
      continue;
    }
    for (const auto& owner : order) {
      Matrix& m = pooled.at(owner);
      if (m.empty()) {
        ++db.skipped;
        continue;
      }
      const DescriptorSet set(owner, std::move(m));
      db.entries.push_back(binarize_fv(compute_fv(gmm, set, true), owner, granularity));
    }
  }
  return db;
}

}  // namespace detail

/// One FV* per scene over the union of its frames' descriptors. Scenes
/// without descriptors are skipped and counted in `skipped`.
template <DescriptorLoader Loader>
FvStarDatabase build_scene_fv_star(std::span<const SceneRecord> scenes, Loader&& load, const DiagonalGmm& gmm,
                                   const PcaModel& pca) {
  if (scenes.empty()) throw Error(Errc::empty_input, "no scenes");
  return detail::build_fv_star(scenes, load, gmm, pca, Granularity::scene,
                               [](const SceneRecord& s, const FrameRef&) { return s.scene_id; });
}

/// One FV* per shot; frames without a shot id form a single shot.
template <DescriptorLoader Loader>
FvStarDatabase build_shot_fv_star(std::span<const SceneRecord> scenes, Loader&& load, const DiagonalGmm& gmm,
                                  const PcaModel& pca) {
  if (scenes.empty()) throw Error(Errc::empty_input, "no scenes");
  return detail::build_fv_star(scenes, load, gmm, pca, Granularity::shot,
                               [](const SceneRecord& s, const FrameRef& f) { return s.scene_id + '\t' + f.shot_id; });
}

template <DescriptorLoader Loader>
FvStarDatabase build_frame_fv_star(std::span<const SceneRecord> scenes, Loader&& load, const DiagonalGmm& gmm,
                                   const PcaModel& pca) {
  if (scenes.empty()) throw Error(Errc::empty_input, "no scenes");
  return detail::build_fv_star(scenes, load, gmm, pca, Granularity::frame,
                               [](const SceneRecord& s, const FrameRef& f) { return s.scene_id + '\t' + f.frame_id; });
}

struct HammingHit {
  std::uint32_t ordinal = 0;
  std::size_t distance = 0;
  bool operator==(const HammingHit&) const = default;
};

/// Exhaustive scan; ascending distance, ties by ordinal. top_k = 0 keeps all.
inline std::vector<HammingHit> hamming_rank(const BinarizedFv& query, std::span<const BinarizedFv> database,
                                            std::size_t top_k = 0) {
  std::vector<HammingHit> hits;
  hits.reserve(database.size());
  for (std::uint32_t i = 0; i < database.size(); ++i) hits.push_back({i, hamming_distance(query, database[i])});
  const auto before = [](const HammingHit& a, const HammingHit& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.ordinal < b.ordinal);
  };
  const std::size_t k = (top_k == 0 || top_k > hits.size()) ? hits.size() : top_k;
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), before);
  hits.resize(k);
  return hits;
}

/// Scene ranking from a frame- or shot-level hit list: each scene takes the
/// position of its best entry.
inline std::vector<std::string> scenes_from_hits(const FvStarDatabase& db, std::span<const HammingHit> hits) {
  std::vector<std::string> out;
  std::map<std::string, bool, std::less<>> seen;
  for (const auto& h : hits) {
    const std::string scene(parent_scene(db.entries[h.ordinal].owner_id));
    if (seen.emplace(scene, true).second) out.push_back(scene);
  }
  return out;
}

struct RerankResult {
  std::vector<std::string> ranking;
  std::vector<std::string> flagged;  // shortlisted scenes with no shot data
};

/// Re-orders the first `shortlist_size` scenes by the minimum Hamming
/// distance between the query and any of the scene's shot signatures.
/// Scenes without shots keep their position; the tail is untouched.
inline RerankResult rerank_shortlist(std::span<const std::string> ranked_scenes, const FvStarDatabase& shots,
                                     const BinarizedFv& query, std::size_t shortlist_size) {
  const std::size_t k = std::min(shortlist_size, ranked_scenes.size());
  std::map<std::string, std::size_t, std::less<>> best;
  for (const auto& e : shots.entries) {
    const std::string_view scene = parent_scene(e.owner_id);
    const std::size_t dist = hamming_distance(query, e);
    auto it = best.find(scene);
    if (it == best.end()) {
      best.emplace(std::string(scene), dist);
    } else {
      it->second = std::min(it->second, dist);
    }
  }

  RerankResult result{std::vector<std::string>(ranked_scenes.begin(), ranked_scenes.end()), {}};
  std::vector<std::size_t> slots;
  std::vector<std::pair<std::size_t, std::size_t>> movable;  // (distance, original rank)
  for (std::size_t i = 0; i < k; ++i) {
    auto it = best.find(ranked_scenes[i]);
    if (it == best.end()) {
      result.flagged.push_back(ranked_scenes[i]);
      continue;
    }
    slots.push_back(i);
    movable.emplace_back(it->second, i);
  }
  std::sort(movable.begin(), movable.end());
  for (std::size_t j = 0; j < slots.size(); ++j) result.ranking[slots[j]] = ranked_scenes[movable[j].second];
  return result;
}

// QIVF: magic, version, granularity u8, K u32, d u32, entry count u32, ids,
// then packed bit arrays (u64 words).
inline void write_fv_star_database(std::ostream& out, const FvStarDatabase& db) {
  BinaryWriter w(out);
  w.magic("QIVF");
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(db.granularity));
  w.u32(db.K);
  w.u32(db.d);
  w.u32(static_cast<std::uint32_t>(db.entries.size()));
  const std::size_t bits = std::size_t{db.K} * db.d;
  for (const auto& e : db.entries) {
    if (e.bit_count != bits) throw Error(Errc::dimension_mismatch, "entry length differs from K*d");
    w.short_string(e.owner_id);
  }
  for (const auto& e : db.entries) {
    for (auto word : e.words) w.u64(word);
  }
}

inline FvStarDatabase read_fv_star_database(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic("QIVF");
  r.expect_version();
  FvStarDatabase db;
  const std::uint8_t g = r.u8();
  if (g > 2) throw Error(Errc::format, "unknown granularity");
  db.granularity = static_cast<Granularity>(g);
  db.K = r.u32();
  db.d = r.u32();
  const std::uint32_t count = r.u32();
  const std::size_t bits = std::size_t{db.K} * db.d;
  const std::size_t words = (bits + 63) / 64;
  for (std::uint32_t i = 0; i < count; ++i) db.entries.push_back({r.short_string(), db.granularity, bits, {}});
  for (auto& e : db.entries) {
    e.words.resize(words);
    for (auto& w : e.words) w = r.u64();
  }
  return db;
}

}  // namespace qbiv
