#pragma once

// Small trained pipelines on synthetic data, shared by the test binaries.

#include <filesystem>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "qbiv/qbiv.hpp"

namespace qbiv::testing {

inline SyntheticSpec small_spec(std::size_t scenes = 12, std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.scene_count = scenes;
  s.frames_per_scene = 6;
  s.descriptors_per_frame = 24;
  s.d = 8;
  s.query_count = 10;
  s.train_frames_per_scene = 4;
  s.seed = seed;
  return s;
}

struct Embedding {
  PcaModel pca;
  DiagonalGmm gmm;
  std::vector<DescriptorSet> projected;  // training frames after PCA
};

inline Embedding fit_embedding(const SyntheticDataset& ds, std::size_t d, std::size_t k, std::uint64_t seed = 1) {
  std::vector<DescriptorSet> raw;
  for (const auto& s : ds.training)
    for (const auto& f : s.frames) raw.push_back(ds.frames.at(f.path));
  Embedding e;
  e.pca = fit_pca(raw, d);
  for (const auto& r : raw) e.projected.push_back(apply_pca(e.pca, r));
  e.gmm = fit_gmm(e.projected, k, seed, 50, 1e-6);
  return e;
}

inline HashBank make_bank(const Embedding& e, PipelineKind pipeline, HashFamily family, HashDomain domain,
                          std::uint32_t n, std::uint64_t seed = 1) {
  RunConfig cfg;
  cfg.pipeline = pipeline;
  cfg.family = family;
  cfg.domain = domain;
  cfg.K = static_cast<std::uint32_t>(e.gmm.components());
  cfg.d = static_cast<std::uint32_t>(e.gmm.dim());
  cfg.M = domain == HashDomain::gbh ? cfg.K : 6;
  cfg.n = n;
  cfg.seed = seed;
  cfg.validate();
  if (family != HashFamily::vq) return sample_hash_bank(cfg.hash_config());
  return train_vq_bank(vq_training_partitions(cfg, e.projected, e.gmm), cfg.hash_config()).bank;
}

inline ModelSet make_models(const Embedding& e, PipelineKind pipeline, HashFamily family, HashDomain domain,
                            std::uint32_t n, std::uint64_t seed = 1) {
  return ModelSet(e.pca, e.gmm, make_bank(e, pipeline, family, domain, n, seed));
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() / ("qbiv_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace qbiv::testing
