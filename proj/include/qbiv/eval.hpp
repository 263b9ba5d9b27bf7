#pragma once

/// Retrieval evaluation: average precision, mAP over queries and trials,
/// latency and index-size reporting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "qbiv/core.hpp"
#include "qbiv/embedding.hpp"
#include "qbiv/index.hpp"

namespace qbiv {

using GroundTruth = std::map<std::string, std::set<std::string>>;

/// Mean over relevant items of the precision at their rank. Relevant items
/// missing from the ranking contribute 0.
inline double average_precision(std::span<const std::string> ranking, const std::set<std::string>& relevant) {
  if (relevant.empty()) throw Error(Errc::empty_input, "query has no relevant scenes");
  std::unordered_set<std::string_view> seen;
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (!seen.insert(ranking[i]).second) throw Error(Errc::invalid_argument, "ranking lists " + ranking[i] + " twice");
    if (relevant.contains(ranking[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

inline double mean_ap(std::span<const double> aps) {
  if (aps.empty()) throw Error(Errc::empty_input, "mAP needs at least one query");
  double s = 0.0;
  for (double a : aps) s += a;
  return s / static_cast<double>(aps.size());
}

struct EvalReport {
  double map = 0.0;
  std::map<std::string, double> per_query_ap;
  double mean_latency_seconds = 0.0;
  std::uint64_t index_bytes = 0;
  std::size_t trials = 1;
  double map_stddev = 0.0;

  std::string to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "map = " << map << '\n'
        << "map_stddev = " << map_stddev << '\n'
        << "mean_latency_seconds = " << mean_latency_seconds << '\n'
        << "index_bytes = " << index_bytes << '\n'
        << "trials = " << trials << '\n';
    for (const auto& [q, ap] : per_query_ap) out << "ap." << q << " = " << ap << '\n';
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["map"] = map;
    j["map_stddev"] = map_stddev;
    j["mean_latency_seconds"] = mean_latency_seconds;
    j["index_bytes"] = index_bytes;
    j["trials"] = trials;
    j["per_query_ap"] = per_query_ap;
    return j;
  }
};

struct Query {
  std::string id;
  DescriptorSet descriptors;
};

struct Retrieval {
  std::vector<std::string> ranking;
  double latency_seconds = 0.0;
};

/// Runs every query through `retrieve` and scores the rankings. Queries are
/// split across `threads` workers; results are merged by query position, so
/// the report does not depend on scheduling.
inline EvalReport run_benchmark(const std::function<Retrieval(const DescriptorSet&)>& retrieve,
                                std::span<const Query> queries, const GroundTruth& truth, std::uint64_t index_bytes,
                                std::size_t threads = 1) {
  if (queries.empty()) throw Error(Errc::empty_input, "no queries");
  for (const auto& q : queries) {
    if (!truth.contains(q.id)) throw Error(Errc::invalid_argument, "query " + q.id + " missing from ground truth");
  }
  std::vector<double> ap(queries.size());
  std::vector<double> latency(queries.size());
  const auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Retrieval r = retrieve(queries[i].descriptors);
      ap[i] = average_precision(r.ranking, truth.at(queries[i].id));
      latency[i] = r.latency_seconds;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, queries.size()));
  if (threads == 1) {
    work(0, queries.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (queries.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(queries.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }

  EvalReport report;
  for (std::size_t i = 0; i < queries.size(); ++i) report.per_query_ap[queries[i].id] = ap[i];
  std::vector<double> merged;
  for (const auto& [q, a] : report.per_query_ap) merged.push_back(a);
  report.map = mean_ap(merged);
  double lat = 0.0;
  for (double l : latency) lat += l;
  report.mean_latency_seconds = lat / static_cast<double>(queries.size());
  report.index_bytes = index_bytes;
  return report;
}

inline std::vector<std::string> scene_ids(const QueryResult& r) {
  std::vector<std::string> out;
  out.reserve(r.ranking.size());
  for (const auto& s : r.ranking) out.push_back(s.scene_id);
  return out;
}

struct BenchmarkOptions {
  std::size_t top_k = 0;
  std::size_t threads = 1;
  bool end_to_end = false;
};

/// Benchmark of a Bloom-filter scene index.
inline EvalReport run_benchmark(const InvertedIndex& index, const IdfWeights& idf, const ModelSet& models,
                                std::span<const Query> queries, const GroundTruth& truth, const ScoringConfig& scoring,
                                const BenchmarkOptions& options = {}) {
  check_fingerprints(index, models);
  const auto retrieve = [&](const DescriptorSet& q) {
    const QueryResult r = score_query(index, idf, scoring, q, models, options.top_k, options.end_to_end);
    return Retrieval{scene_ids(r), r.latency_seconds};
  };
  return run_benchmark(retrieve, queries, truth, serialized_size(index), options.threads);
}

/// Averages repeated trials of a randomized configuration.
inline EvalReport aggregate_trials(std::span<const EvalReport> runs) {
  if (runs.empty()) throw Error(Errc::empty_input, "no trials");
  EvalReport out;
  out.trials = runs.size();
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    out.map += r.map / n;
    out.mean_latency_seconds += r.mean_latency_seconds / n;
    for (const auto& [q, ap] : r.per_query_ap) out.per_query_ap[q] += ap / n;
  }
  out.index_bytes = runs.front().index_bytes;
  const bool identical = std::all_of(runs.begin(), runs.end(), [&](const EvalReport& r) { return r.map == runs.front().map; });
  if (identical) {
    out.map = runs.front().map;
  } else {
    double ss = 0.0;
    for (const auto& r : runs) ss += (r.map - out.map) * (r.map - out.map);
    out.map_stddev = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

}  // namespace qbiv
