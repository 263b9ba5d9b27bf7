#pragma once

// Run configuration: flat `key = value` files with `#` comments. Every key
// mirrors a RunConfig field; later assignments override earlier ones.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "qbiv/core.hpp"
#include "qbiv/hashing.hpp"
#include "qbiv/index.hpp"
#include "qbiv/synthetic.hpp"

namespace qbiv {

enum class PipelineKind : std::uint8_t { bf_gd, bf_pi, scene_fv_star, frame_fv_star };

inline const char* to_string(PipelineKind p) {
  switch (p) {
    case PipelineKind::bf_gd: return "bf_gd";
    case PipelineKind::bf_pi: return "bf_pi";
    case PipelineKind::scene_fv_star: return "scene_fv_star";
    case PipelineKind::frame_fv_star: return "frame_fv_star";
  }
  return "?";
}

inline bool is_bloom(PipelineKind p) { return p == PipelineKind::bf_gd || p == PipelineKind::bf_pi; }

inline Pipeline bloom_pipeline(PipelineKind p) { return p == PipelineKind::bf_gd ? Pipeline::bf_gd : Pipeline::bf_pi; }

inline constexpr std::uint32_t kMaxVqBits = 16;

struct RunConfig {
  PipelineKind pipeline = PipelineKind::bf_pi;
  HashFamily family = HashFamily::vq;
  HashDomain domain = HashDomain::gbh;
  std::uint32_t M = 16;
  std::uint32_t n = 8;
  std::uint32_t K = 16;
  std::uint32_t d = 8;
  double alpha = 0.5;
  ScoringMode scoring = ScoringMode::tfidf;
  bool partitioned = true;
  std::uint64_t seed = 1;
  std::size_t trials = 10;
  std::size_t shortlist_size = 100;
  std::size_t top_k = 0;  // 0: rank every scene
  std::size_t gmm_iters = 100;
  double gmm_tol = 1e-6;
  std::size_t threads = 1;
  bool end_to_end = false;
  SyntheticSpec synth;

  /// Rejects invalid parameter combinations with Errc::config.
  void validate() const {
    const auto fail = [](const std::string& why) { throw Error(Errc::config, why); };
    if (M < 1 || K < 1 || d < 1) fail("M, K and d must be at least 1");
    if (n < 1 || n > kMaxHashBits) fail("n must be in [1, 24]");
    if (!std::isfinite(alpha)) fail("alpha must be finite");
    if (trials < 1) fail("trials must be at least 1");
    if (gmm_iters < 1) fail("gmm_iters must be at least 1");
    if (!is_bloom(pipeline)) return;
    if (pipeline == PipelineKind::bf_pi && domain != HashDomain::gbh) fail("bf_pi requires domain = gbh");
    if (domain == HashDomain::gbh && M != K) fail("gbh requires M = K");
    if (family == HashFamily::vq && n > kMaxVqBits) fail("vq requires n <= 16");
    if (M > 0xFFFF) fail("M must be <= 65535");
  }

  HashFamilyConfig hash_config() const {
    return {family, domain, M, n, domain == HashDomain::vbh ? K * d : d, seed};
  }

  ScoringConfig scoring_config() const { return {scoring, alpha}; }

  /// Trials actually run: randomized LSH banks only.
  std::size_t effective_trials() const {
    return is_bloom(pipeline) && family != HashFamily::vq ? trials : 1;
  }

  void set(std::string_view key, std::string_view value);
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw Error(Errc::config, "invalid value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  // from_chars for double is missing in some standard libraries.
  std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(Errc::config, "invalid value '" + s + "' for " + std::string(key));
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::config, "invalid boolean '" + std::string(v) + "' for " + std::string(key));
}

}  // namespace detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
  using detail::parse_bool;
  using detail::parse_number;
  using detail::parse_real;
  const auto bad = [&] { throw Error(Errc::config, "invalid value '" + std::string(value) + "' for " + std::string(key)); };
  if (key == "pipeline") {
    if (value == "bf_gd") pipeline = PipelineKind::bf_gd;
    else if (value == "bf_pi") pipeline = PipelineKind::bf_pi;
    else if (value == "scene_fv_star") pipeline = PipelineKind::scene_fv_star;
    else if (value == "frame_fv_star") pipeline = PipelineKind::frame_fv_star;
    else bad();
  } else if (key == "family") {
    if (value == "lsh_c") family = HashFamily::lsh_c;
    else if (value == "lsh_s") family = HashFamily::lsh_s;
    else if (value == "lsh_b") family = HashFamily::lsh_b;
    else if (value == "vq") family = HashFamily::vq;
    else bad();
  } else if (key == "domain") {
    if (value == "vbh") domain = HashDomain::vbh;
    else if (value == "gbh") domain = HashDomain::gbh;
    else bad();
  } else if (key == "scoring") {
    if (value == "hash_matches") scoring = ScoringMode::hash_matches;
    else if (value == "tfidf") scoring = ScoringMode::tfidf;
    else bad();
  } else if (key == "M") {
    M = parse_number<std::uint32_t>(key, value);
  } else if (key == "n") {
    n = parse_number<std::uint32_t>(key, value);
  } else if (key == "K") {
    K = parse_number<std::uint32_t>(key, value);
  } else if (key == "d") {
    d = parse_number<std::uint32_t>(key, value);
  } else if (key == "alpha") {
    alpha = parse_real(key, value);
  } else if (key == "partitioned") {
    partitioned = parse_bool(key, value);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "trials") {
    trials = parse_number<std::size_t>(key, value);
  } else if (key == "shortlist_size") {
    shortlist_size = parse_number<std::size_t>(key, value);
  } else if (key == "top_k") {
    top_k = parse_number<std::size_t>(key, value);
  } else if (key == "gmm_iters") {
    gmm_iters = parse_number<std::size_t>(key, value);
  } else if (key == "gmm_tol") {
    gmm_tol = parse_real(key, value);
  } else if (key == "threads") {
    threads = parse_number<std::size_t>(key, value);
  } else if (key == "end_to_end") {
    end_to_end = parse_bool(key, value);
  } else if (key == "synth.scenes") {
    synth.scene_count = parse_number<std::size_t>(key, value);
  } else if (key == "synth.frames") {
    synth.frames_per_scene = parse_number<std::size_t>(key, value);
  } else if (key == "synth.descriptors") {
    synth.descriptors_per_frame = parse_number<std::size_t>(key, value);
  } else if (key == "synth.d") {
    synth.d = parse_number<std::size_t>(key, value);
  } else if (key == "synth.queries") {
    synth.query_count = parse_number<std::size_t>(key, value);
  } else if (key == "synth.noise_sigma") {
    synth.noise_sigma = parse_real(key, value);
  } else if (key == "synth.radius") {
    synth.radius = parse_real(key, value);
  } else if (key == "synth.train_frames") {
    synth.train_frames_per_scene = parse_number<std::size_t>(key, value);
  } else {
    throw Error(Errc::config, "unknown config key '" + std::string(key) + "'");
  }
}

/// Applies one `key = value` assignment.
inline void apply_assignment(RunConfig& cfg, std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw Error(Errc::config, "expected key = value, got '" + std::string(line) + "'");
  cfg.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
}

inline void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    try {
      apply_assignment(cfg, line);
    } catch (const Error& e) {
      throw Error(Errc::config, "line " + std::to_string(n) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw Error(Errc::config, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
  return cfg;
}

}  // namespace qbiv
