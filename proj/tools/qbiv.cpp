// qbiv: scene-level query-by-image video retrieval with Bloom filters.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "qbiv/qbiv.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

void print_train(const qbiv::TrainResult& r, const std::filesystem::path& dir) {
  std::cout << "descriptors\t" << r.descriptors << '\n';
  std::cout << "pca\t" << qbiv::to_hex(r.pca) << '\t' << (dir / "pca.qivm").string() << '\n';
  std::cout << "gmm\t" << qbiv::to_hex(r.gmm) << '\t' << (dir / "gmm.qivm").string() << '\n';
  if (r.bank) std::cout << "bank\t" << qbiv::to_hex(*r.bank) << '\t' << (dir / "bank.qivh").string() << '\n';
  for (const auto& f : r.vq_report.fallbacks) {
    std::cerr << "warning: hash " << f.hash_index << " trained on " << f.points
              << " points (< 2^n); centroids resampled with jitter\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-by-image scene retrieval with distance-sensitive Bloom filters"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string output;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "random seed (overrides config)");
  app.add_option("--threads", threads, "worker threads for evaluation");
  app.add_option("--output", output, "output file or directory");
  app.add_option("--set", overrides, "override a config key: --set key=value");

  std::string manifest, models, index, query, queries, truth;
  std::optional<std::size_t> top_k;
  bool json = false;

  auto* train = app.add_subcommand("train", "fit PCA, GMM and hash bank on a training manifest");
  train->add_option("--manifest", manifest, "training manifest")->required();

  auto* build = app.add_subcommand("build", "index the scenes of a manifest");
  build->add_option("--manifest", manifest, "scene manifest")->required();
  build->add_option("--models", models, "directory written by train")->required();

  auto* query_cmd = app.add_subcommand("query", "rank scenes for one query image");
  query_cmd->add_option("--index", index, "index or FV* database")->required();
  query_cmd->add_option("--models", models, "directory written by train")->required();
  query_cmd->add_option("--query", query, "query descriptor file (QIVD)")->required();
  query_cmd->add_option("--top-k", top_k, "number of scenes to print");

  auto* evaluate = app.add_subcommand("evaluate", "mAP and latency over a query set");
  evaluate->add_option("--index", index, "index or FV* database")->required();
  evaluate->add_option("--models", models, "directory written by train")->required();
  evaluate->add_option("--queries", queries, "query list: query_id<TAB>path")->required();
  evaluate->add_option("--ground-truth", truth, "query_id<TAB>scene[,scene...]")->required();
  evaluate->add_option("--manifest", manifest, "scene manifest, needed to rebuild indexes for LSH trials");
  evaluate->add_flag("--json", json, "emit the report as JSON");

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    qbiv::RunConfig cfg = config_path.empty() ? qbiv::RunConfig{} : qbiv::load_config(config_path);
    for (const auto& o : overrides) qbiv::apply_assignment(cfg, o);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    cfg.validate();

    const auto need_output = [&](const char* what) {
      if (output.empty()) throw qbiv::Error(qbiv::Errc::config, std::string("--output is required for ") + what);
      return std::filesystem::path(output);
    };

    if (train->parsed()) {
      const auto dir = need_output("train");
      print_train(qbiv::cmd_train(cfg, manifest, dir), dir);
    } else if (build->parsed()) {
      const auto summary = qbiv::cmd_build(cfg, manifest, models, need_output("build"));
      std::cout << summary.to_text();
    } else if (query_cmd->parsed()) {
      const auto result = qbiv::cmd_query(cfg, index, models, query, top_k.value_or(cfg.top_k));
      std::cout << qbiv::format_query_result(result);
    } else if (evaluate->parsed()) {
      std::optional<std::filesystem::path> m;
      if (!manifest.empty()) m = manifest;
      const auto report = qbiv::cmd_evaluate(cfg, index, models, queries, truth, m);
      const std::string text = json ? report.to_json().dump(2) + "\n" : report.to_text();
      std::cout << text;
      if (!output.empty()) qbiv::write_file(output, text);
    } else if (gen->parsed()) {
      const auto files = qbiv::cmd_gen_synth(cfg, need_output("gen-synth"));
      std::cout << "manifest\t" << files.manifest.string() << '\n'
                << "train_manifest\t" << files.train_manifest.string() << '\n'
                << "queries\t" << files.queries.string() << '\n'
                << "ground_truth\t" << files.ground_truth.string() << '\n';
    }
  } catch (const qbiv::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == qbiv::Errc::config ? kExitConfig : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
