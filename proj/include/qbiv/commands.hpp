#pragma once

/// The train / build / query / evaluate / gen-synth workflows behind the
/// command-line tool, exposed as functions so they can be driven and tested
/// without spawning processes.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qbiv/baseline.hpp"
#include "qbiv/binary_io.hpp"
#include "qbiv/config.hpp"
#include "qbiv/dataset.hpp"
#include "qbiv/embedding.hpp"
#include "qbiv/eval.hpp"
#include "qbiv/hashing.hpp"
#include "qbiv/index.hpp"
#include "qbiv/synthetic.hpp"

namespace qbiv {

struct ModelPaths {
  std::filesystem::path pca, gmm, bank;

  explicit ModelPaths(const std::filesystem::path& dir)
      : pca(dir / "pca.qivm"), gmm(dir / "gmm.qivm"), bank(dir / "bank.qivh") {}
};

// ---------------------------------------------------------------------------
// Training

/// Hash-training corpus for a pipeline: per-Gaussian residuals (BF-PI),
/// per-Gaussian FV chunks (BF-GD, GBH), or whole FVs (BF-GD, VBH).
inline std::vector<Matrix> vq_training_partitions(const RunConfig& cfg, std::span<const DescriptorSet> projected,
                                                  const DiagonalGmm& gmm) {
  const std::size_t k = gmm.components();
  const std::size_t d = gmm.dim();
  if (cfg.pipeline == PipelineKind::bf_pi) {
    std::vector<Matrix> parts(k, Matrix(0, d));
    for (const auto& frame : projected) {
      for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto t = point_index(gmm, frame[i]);
        parts[t.gaussian].append_row(t.residual);
      }
    }
    return parts;
  }
  if (cfg.domain == HashDomain::vbh) {
    std::vector<Matrix> parts(1, Matrix(0, k * d));
    for (const auto& frame : projected) {
      if (!frame.empty()) parts[0].append_row(compute_fv(gmm, frame, true).values);
    }
    return parts;
  }
  std::vector<Matrix> parts(k, Matrix(0, d));
  for (const auto& frame : projected) {
    if (frame.empty()) continue;
    const auto fv = compute_fv(gmm, frame, true);
    for (std::size_t m = 0; m < k; ++m) parts[m].append_row(std::span<const double>(fv.values).subspan(m * d, d));
  }
  return parts;
}

struct TrainedModels {
  PcaModel pca;
  DiagonalGmm gmm;
  std::optional<HashBank> bank;
  VqTrainingReport vq_report;
  std::size_t descriptors = 0;
};

template <DescriptorLoader Loader>
TrainedModels train_models(const RunConfig& cfg, std::span<const SceneRecord> scenes, Loader&& load) {
  cfg.validate();
  std::vector<DescriptorSet> raw;
  for (const auto& s : scenes) {
    for (const auto& f : s.frames) raw.push_back(load(f));
  }
  TrainedModels out;
  out.pca = fit_pca(raw, cfg.d);
  std::vector<DescriptorSet> projected;
  projected.reserve(raw.size());
  for (const auto& r : raw) {
    out.descriptors += r.size();
    projected.push_back(apply_pca(out.pca, r));
  }
  raw.clear();
  out.gmm = fit_gmm(projected, cfg.K, cfg.seed, cfg.gmm_iters, cfg.gmm_tol);
  if (!is_bloom(cfg.pipeline)) return out;
  const HashFamilyConfig hc = cfg.hash_config();
  if (cfg.family == HashFamily::vq) {
    const auto parts = vq_training_partitions(cfg, projected, out.gmm);
    auto trained = train_vq_bank(parts, hc);
    out.bank = std::move(trained.bank);
    out.vq_report = std::move(trained.report);
  } else {
    out.bank = sample_hash_bank(hc);
  }
  return out;
}

struct TrainResult {
  Digest pca{};
  Digest gmm{};
  std::optional<Digest> bank;
  VqTrainingReport vq_report;
  std::size_t descriptors = 0;
};

inline TrainResult save_models(const TrainedModels& m, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create " + dir.string() + ": " + ec.message());
  const ModelPaths paths(dir);
  TrainResult r;
  const std::string pca = to_bytes(m.pca, [](std::ostream& o, const PcaModel& v) { write_model(o, v); });
  const std::string gmm = to_bytes(m.gmm, [](std::ostream& o, const DiagonalGmm& v) { write_model(o, v); });
  write_file(paths.pca, pca);
  write_file(paths.gmm, gmm);
  r.pca = sha256(pca);
  r.gmm = sha256(gmm);
  if (m.bank) {
    const std::string bank = to_bytes(*m.bank, write_hash_bank);
    write_file(paths.bank, bank);
    r.bank = sha256(bank);
  } else {
    std::filesystem::remove(paths.bank, ec);
  }
  r.vq_report = m.vq_report;
  r.descriptors = m.descriptors;
  return r;
}

inline TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& manifest,
                             const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto scenes = read_manifest(manifest);
  if (scenes.empty()) throw Error(Errc::empty_input, "training manifest is empty");
  return save_models(train_models(cfg, scenes, FileLoader{}), out_dir);
}

// ---------------------------------------------------------------------------
// Model loading

struct LoadedModels {
  PcaModel pca;
  DiagonalGmm gmm;
  std::optional<HashBank> bank;

  ModelSet model_set() const {
    if (!bank) throw Error(Errc::io, "no hash bank in model directory");
    return ModelSet(pca, gmm, *bank);
  }
};

inline LoadedModels load_models(const std::filesystem::path& dir) {
  const ModelPaths paths(dir);
  LoadedModels m;
  {
    std::istringstream in(read_file(paths.pca), std::ios::binary);
    m.pca = read_pca(in);
  }
  {
    std::istringstream in(read_file(paths.gmm), std::ios::binary);
    m.gmm = read_gmm(in);
  }
  if (std::filesystem::exists(paths.bank)) {
    std::istringstream in(read_file(paths.bank), std::ios::binary);
    m.bank = read_hash_bank(in);
  }
  return m;
}

/// Models must have been trained with the configuration's shape parameters.
inline void check_models_match(const RunConfig& cfg, const LoadedModels& m) {
  const auto mismatch = [](const std::string& what) {
    throw Error(Errc::fingerprint_mismatch, "models do not match config: " + what);
  };
  if (m.gmm.components() != cfg.K) mismatch("K");
  if (m.pca.d_out() != cfg.d) mismatch("d");
  if (!is_bloom(cfg.pipeline)) return;
  if (!m.bank) mismatch("no hash bank");
  const auto& hc = m.bank->config;
  if (hc.family != cfg.family || hc.domain != cfg.domain || hc.M != cfg.M || hc.n != cfg.n) mismatch("hash bank");
}

// ---------------------------------------------------------------------------
// Build

struct BuildSummary {
  PipelineKind pipeline = PipelineKind::bf_pi;
  BuildReport report;
  std::vector<std::string> scene_ids;
  std::uint64_t bytes = 0;
  std::size_t entries = 0;  // FV* entries, or posting lists for Bloom indexes

  std::string to_text() const {
    std::ostringstream out;
    out << "pipeline = " << to_string(pipeline) << '\n'
        << "scenes = " << report.scenes << '\n'
        << "frames = " << report.frames << '\n'
        << "descriptors = " << report.descriptors << '\n'
        << "empty_frames = " << report.empty_frames << '\n'
        << "entries = " << entries << '\n'
        << "bytes = " << bytes << '\n';
    for (std::size_t v = 0; v < report.setbits.size(); ++v) out << "setbits." << scene_ids[v] << " = " << report.setbits[v] << '\n';
    return out.str();
  }
};

inline std::filesystem::path shots_path(const std::filesystem::path& db) {
  return std::filesystem::path(db.string() + ".shots");
}

inline std::filesystem::path report_path(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".report");
}

inline BuildSummary cmd_build(const RunConfig& cfg, const std::filesystem::path& manifest,
                              const std::filesystem::path& models_dir, const std::filesystem::path& output) {
  cfg.validate();
  const auto scenes = read_manifest(manifest);
  if (scenes.empty()) throw Error(Errc::empty_input, "manifest is empty");
  const LoadedModels models = load_models(models_dir);
  check_models_match(cfg, models);

  BuildSummary summary;
  summary.pipeline = cfg.pipeline;
  if (is_bloom(cfg.pipeline)) {
    const ModelSet set = models.model_set();
    const FilterConfig fc = filter_config_for(set.bank().config, cfg.partitioned);
    auto built = build_index(bloom_pipeline(cfg.pipeline), scenes, FileLoader{}, set, fc);
    if (built.report.empty_frames > 0) {
      std::cerr << "warning: skipped " << built.report.empty_frames << " frames without descriptors\n";
    }
    const std::string bytes = to_bytes(built.index, write_index);
    write_file(output, bytes);
    summary.report = std::move(built.report);
    summary.scene_ids = built.index.scenes;
    summary.bytes = bytes.size();
    summary.entries = built.index.addresses.size();
  } else {
    FvStarDatabase db = cfg.pipeline == PipelineKind::scene_fv_star
                            ? build_scene_fv_star(scenes, FileLoader{}, models.gmm, models.pca)
                            : build_frame_fv_star(scenes, FileLoader{}, models.gmm, models.pca);
    if (db.skipped > 0) std::cerr << "warning: skipped " << db.skipped << " entries without descriptors\n";
    const std::string bytes = to_bytes(db, write_fv_star_database);
    write_file(output, bytes);
    summary.bytes = bytes.size();
    summary.entries = db.entries.size();
    bool has_shots = false;
    for (const auto& s : scenes) {
      summary.scene_ids.push_back(s.scene_id);
      summary.report.frames += s.frames.size();
      for (const auto& f : s.frames) has_shots = has_shots || !f.shot_id.empty();
    }
    summary.report.scenes = scenes.size();
    if (cfg.pipeline == PipelineKind::scene_fv_star && has_shots) {
      const auto shots = build_shot_fv_star(scenes, FileLoader{}, models.gmm, models.pca);
      const std::string shot_bytes = to_bytes(shots, write_fv_star_database);
      write_file(shots_path(output), shot_bytes);
      summary.bytes += shot_bytes.size();
    }
  }
  write_file(report_path(output), summary.to_text());
  return summary;
}

// ---------------------------------------------------------------------------
// Query and evaluation

/// Binarized-FV scene search: Hamming ranking of scene (or frame)
/// signatures, with optional shot-level re-ranking of the scene shortlist.
struct FvStarSearcher {
  FvStarDatabase db;
  std::optional<FvStarDatabase> shots;
  PcaModel pca;
  DiagonalGmm gmm;
  std::size_t shortlist_size = 100;

  QueryResult search(const DescriptorSet& query, std::size_t top_k, bool end_to_end = false) const {
    if (query.empty()) throw Error(Errc::empty_input, "query has no descriptors");
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    const BinarizedFv q = binarize_fv(compute_fv(gmm, apply_pca(pca, query), true));
    const auto t1 = Clock::now();
    const auto hits = hamming_rank(q, db.entries);
    const double bits = static_cast<double>(q.bit_count);

    std::vector<std::string> ranking = scenes_from_hits(db, hits);
    std::map<std::string, std::pair<std::uint32_t, double>, std::less<>> info;  // scene -> (ordinal, score)
    for (const auto& h : hits) {
      info.try_emplace(std::string(parent_scene(db.entries[h.ordinal].owner_id)), h.ordinal,
                       bits - static_cast<double>(h.distance));
    }
    if (db.granularity == Granularity::scene && shots && shortlist_size > 0) {
      ranking = rerank_shortlist(ranking, *shots, q, shortlist_size).ranking;
    }
    QueryResult result;
    const std::size_t k = top_k == 0 ? ranking.size() : std::min(top_k, ranking.size());
    for (std::size_t i = 0; i < k; ++i) {
      const auto& [ordinal, score] = info.at(ranking[i]);
      result.ranking.push_back({ordinal, ranking[i], score});
    }
    const auto t2 = Clock::now();
    result.latency_seconds = std::chrono::duration<double>(t2 - (end_to_end ? t0 : t1)).count();
    return result;
  }
};

/// A loaded retrieval structure: a Bloom-filter index or an FV* database.
struct Searcher {
  std::optional<InvertedIndex> index;
  std::optional<ModelSet> models;
  std::optional<FvStarSearcher> fv_star;
  std::uint64_t bytes = 0;

  QueryResult search(const ScoringConfig& scoring, const DescriptorSet& q, std::size_t top_k, bool end_to_end) const {
    if (index) return score_query(*index, index->idf, scoring, q, *models, top_k, end_to_end);
    return fv_star->search(q, top_k, end_to_end);
  }
};

inline Searcher open_searcher(const RunConfig& cfg, const std::filesystem::path& index_path,
                              const std::filesystem::path& models_dir) {
  const std::string bytes = read_file(index_path);
  LoadedModels models = load_models(models_dir);
  Searcher s;
  s.bytes = bytes.size();
  std::istringstream in(bytes, std::ios::binary);
  if (bytes.rfind("QIVI", 0) == 0) {
    s.index = read_index(in);
    s.models.emplace(models.model_set());
    check_fingerprints(*s.index, *s.models);
  } else if (bytes.rfind("QIVF", 0) == 0) {
    FvStarSearcher fs{read_fv_star_database(in), std::nullopt, std::move(models.pca), std::move(models.gmm),
                      cfg.shortlist_size};
    if (fs.db.K != fs.gmm.components() || fs.db.d != fs.gmm.dim()) {
      throw Error(Errc::fingerprint_mismatch, "FV* database was built with a different GMM shape");
    }
    if (std::filesystem::exists(shots_path(index_path))) {
      const std::string shot_bytes = read_file(shots_path(index_path));
      std::istringstream sin(shot_bytes, std::ios::binary);
      fs.shots = read_fv_star_database(sin);
      s.bytes += shot_bytes.size();
    }
    s.fv_star = std::move(fs);
  } else {
    throw Error(Errc::format, index_path.string() + " is neither an index nor an FV* database");
  }
  return s;
}

inline QueryResult cmd_query(const RunConfig& cfg, const std::filesystem::path& index_path,
                             const std::filesystem::path& models_dir, const std::filesystem::path& query_path,
                             std::size_t top_k) {
  const Searcher s = open_searcher(cfg, index_path, models_dir);
  const DescriptorSet q = load_descriptors(query_path);
  return s.search(cfg.scoring_config(), q, top_k, cfg.end_to_end);
}

inline std::string format_query_result(const QueryResult& r) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < r.ranking.size(); ++i) {
    out << (i + 1) << '\t' << r.ranking[i].scene_id << '\t' << r.ranking[i].score << '\n';
  }
  out << "latency_seconds\t" << r.latency_seconds << '\n';
  return out.str();
}

/// Evaluates an index on a query set. Randomized LSH configurations run
/// `trials` banks (seed, seed+1, ...); trials after the first rebuild the
/// index from `manifest`.
inline EvalReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& index_path,
                               const std::filesystem::path& models_dir, const std::filesystem::path& queries_path,
                               const std::filesystem::path& truth_path,
                               const std::optional<std::filesystem::path>& manifest = std::nullopt) {
  cfg.validate();
  const Searcher searcher = open_searcher(cfg, index_path, models_dir);
  const auto queries = load_queries(queries_path);
  const GroundTruth truth = read_ground_truth(truth_path);
  const ScoringConfig scoring = cfg.scoring_config();

  const auto run = [&](const Searcher& s) {
    const auto retrieve = [&](const DescriptorSet& q) {
      const QueryResult r = s.search(scoring, q, cfg.top_k, cfg.end_to_end);
      return Retrieval{scene_ids(r), r.latency_seconds};
    };
    return run_benchmark(retrieve, queries, truth, s.bytes, cfg.threads);
  };

  std::vector<EvalReport> runs{run(searcher)};
  const bool randomized = searcher.index && searcher.index->hashing.family != HashFamily::vq;
  const std::size_t trials = randomized ? cfg.trials : 1;
  if (trials > 1) {
    if (!manifest) throw Error(Errc::config, "repeated LSH trials need --manifest to rebuild the index");
    const auto scenes = read_manifest(*manifest);
    for (std::size_t t = 1; t < trials; ++t) {
      HashFamilyConfig hc = searcher.index->hashing;
      hc.seed += t;
      const ModelSet set(searcher.models->pca(), searcher.models->gmm(), sample_hash_bank(hc));
      Searcher trial;
      trial.index = build_index(searcher.index->pipeline, scenes, FileLoader{}, set, searcher.index->filter).index;
      trial.models.emplace(set);
      trial.bytes = serialized_size(*trial.index);
      runs.push_back(run(trial));
    }
  }
  return aggregate_trials(runs);
}

inline SyntheticFiles cmd_gen_synth(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  SyntheticSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  return gen_synthetic(spec, out_dir);
}

}  // namespace qbiv
