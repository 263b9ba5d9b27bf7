#pragma once

/// Synthetic scene datasets for desk-scale experiments. Each scene is an
/// isotropic unit-variance Gaussian descriptor cloud whose mean lies on a
/// sphere of radius `radius`; frames sample from their scene's cloud, and
/// queries are noisy copies of indexed frames.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "qbiv/binary_io.hpp"
#include "qbiv/core.hpp"
#include "qbiv/dataset.hpp"
#include "qbiv/embedding.hpp"
#include "qbiv/eval.hpp"
#include "qbiv/index.hpp"

namespace qbiv {

struct SyntheticSpec {
  std::size_t scene_count = 50;
  std::size_t frames_per_scene = 30;
  std::size_t descriptors_per_frame = 64;
  std::size_t d = 8;
  std::size_t query_count = 50;
  double noise_sigma = 0.1;
  double radius = 2.0;
  std::size_t train_frames_per_scene = 0;  // 0: half of frames_per_scene
  std::uint64_t seed = 1;

  void validate() const {
    if (scene_count < 1 || frames_per_scene < 1 || descriptors_per_frame < 1 || d < 1 || query_count < 1) {
      throw Error(Errc::invalid_argument, "synthetic counts must be at least 1");
    }
    if (!(noise_sigma >= 0.0) || !(radius >= 0.0)) throw Error(Errc::invalid_argument, "noise_sigma and radius must be >= 0");
  }

  std::size_t train_frames() const {
    return train_frames_per_scene > 0 ? train_frames_per_scene : std::max<std::size_t>(1, frames_per_scene / 2);
  }

  std::size_t shot_length() const { return (frames_per_scene + 4) / 5; }
};

/// Scenes reference frames through in-memory keys ("<scene>/<frame>").
struct SyntheticDataset {
  std::vector<SceneRecord> scenes;
  std::vector<SceneRecord> training;
  std::map<std::string, DescriptorSet> frames;  // keyed by FrameRef::path
  std::vector<Query> queries;
  GroundTruth truth;

  MemoryLoader loader() const { return MemoryLoader{&frames}; }
};

namespace detail {

enum : std::uint64_t { kStreamMeans = 1, kStreamFrames = 2, kStreamTrain = 3, kStreamQueries = 4 };

inline std::string padded(const char* prefix, std::size_t i, std::size_t width) {
  std::string num = std::to_string(i);
  if (num.size() < width) num.insert(0, width - num.size(), '0');
  return prefix + num;
}

inline std::size_t digits(std::size_t n) { return std::to_string(n > 0 ? n - 1 : 0).size(); }

}  // namespace detail

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  const std::size_t d = spec.d;

  Matrix means(spec.scene_count, d);
  for (std::size_t s = 0; s < spec.scene_count; ++s) {
    CounterRng rng(spec.seed, detail::kStreamMeans, s);
    double norm = 0.0;
    auto row = means.row(s);
    while (norm == 0.0) {
      norm = 0.0;
      for (double& v : row) {
        v = rng.normal();
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    for (double& v : row) v *= spec.radius / norm;
  }

  const auto sample_frame = [&](std::size_t scene, std::uint64_t stream, std::size_t frame, const std::string& id) {
    CounterRng rng(spec.seed, stream, scene * 1'000'003ULL + frame);
    Matrix m(spec.descriptors_per_frame, d);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < d; ++j) m(i, j) = static_cast<float>(means(scene, j) + rng.normal());
    }
    return DescriptorSet(id, std::move(m));
  };

  const std::size_t sw = detail::digits(spec.scene_count);
  const std::size_t fw = detail::digits(std::max(spec.frames_per_scene, spec.train_frames()));
  for (std::size_t s = 0; s < spec.scene_count; ++s) {
    const std::string sid = detail::padded("scene", s, sw);
    SceneRecord rec{sid, {}};
    SceneRecord train{sid, {}};
    for (std::size_t f = 0; f < spec.frames_per_scene; ++f) {
      const std::string fid = detail::padded("f", f, fw);
      const std::string key = sid + "/" + fid;
      ds.frames.emplace(key, sample_frame(s, detail::kStreamFrames, f, key));
      rec.frames.push_back({fid, key, detail::padded("shot", f / spec.shot_length(), 2)});
    }
    for (std::size_t f = 0; f < spec.train_frames(); ++f) {
      const std::string fid = detail::padded("t", f, fw);
      const std::string key = sid + "/" + fid;
      ds.frames.emplace(key, sample_frame(s, detail::kStreamTrain, f, key));
      train.frames.push_back({fid, key, {}});
    }
    ds.scenes.push_back(std::move(rec));
    ds.training.push_back(std::move(train));
  }

  const std::size_t qw = detail::digits(spec.query_count);
  for (std::size_t q = 0; q < spec.query_count; ++q) {
    CounterRng rng(spec.seed, detail::kStreamQueries, q);
    const std::size_t s = static_cast<std::size_t>(rng.below(spec.scene_count));
    const std::size_t f = static_cast<std::size_t>(rng.below(spec.frames_per_scene));
    const std::string qid = detail::padded("q", q, qw);
    const DescriptorSet& src = ds.frames.at(ds.scenes[s].frames[f].path);
    Matrix m = src.vectors;
    if (spec.noise_sigma > 0.0) {
      for (double& v : m.data()) v = static_cast<float>(v + spec.noise_sigma * rng.normal());
    }
    ds.queries.push_back({qid, DescriptorSet(qid, std::move(m))});
    ds.truth[qid] = {ds.scenes[s].scene_id};
  }
  return ds;
}

struct SyntheticFiles {
  std::filesystem::path manifest;
  std::filesystem::path train_manifest;
  std::filesystem::path queries;
  std::filesystem::path ground_truth;
};

/// Writes the dataset under `dir`: manifest.tsv, train_manifest.tsv,
/// queries.tsv, ground_truth.tsv, and QIVD files under frames/ and queries/.
inline SyntheticFiles write_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  fs::create_directories(dir / "queries", ec);
  if (ec) throw Error(Errc::io, "cannot create " + dir.string() + ": " + ec.message());

  const auto relocate = [&](std::span<const SceneRecord> scenes) {
    std::vector<SceneRecord> out(scenes.begin(), scenes.end());
    for (auto& s : out) {
      for (auto& f : s.frames) {
        const std::string rel = "frames/" + s.scene_id + "_" + f.frame_id + ".qivd";
        write_file(dir / rel, to_bytes(ds.frames.at(f.path), write_descriptors));
        f.path = rel;
      }
    }
    return out;
  };

  SyntheticFiles files{dir / "manifest.tsv", dir / "train_manifest.tsv", dir / "queries.tsv", dir / "ground_truth.tsv"};
  write_manifest(files.manifest, relocate(ds.scenes));
  write_manifest(files.train_manifest, relocate(ds.training));
  std::string qlist;
  for (const auto& q : ds.queries) {
    const std::string rel = "queries/" + q.id + ".qivd";
    write_file(dir / rel, to_bytes(q.descriptors, write_descriptors));
    qlist += q.id + "\t" + rel + "\n";
  }
  write_file(files.queries, qlist);
  write_file(files.ground_truth, format_ground_truth(ds.truth));
  return files;
}

inline SyntheticFiles gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  return write_synthetic(generate_synthetic(spec), dir);
}

}  // namespace qbiv
