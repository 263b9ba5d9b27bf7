#pragma once

// Text formats tying descriptor files together: the scene manifest, query
// lists and ground truth. Relative paths resolve against the listing file's
// directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qbiv/core.hpp"
#include "qbiv/embedding.hpp"
#include "qbiv/eval.hpp"
#include "qbiv/index.hpp"

namespace qbiv {

namespace fs = std::filesystem;

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Non-empty, non-comment lines with trailing CR stripped, with line numbers.
inline std::vector<std::pair<std::size_t, std::string>> content_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.emplace_back(n, line);
  }
  return out;
}

inline fs::path resolve(const fs::path& base_file, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base_file.parent_path() / path;
}

/// scene_id<TAB>frame_id<TAB>descriptor_path[<TAB>shot_id]. Scenes keep
/// first-appearance order.
inline std::vector<SceneRecord> read_manifest(const fs::path& path, bool check_paths = true) {
  std::vector<SceneRecord> scenes;
  std::map<std::string, std::size_t> position;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [n, line] : content_lines(path)) {
    const auto f = split(line, '\t');
    if (f.size() != 3 && f.size() != 4) {
      throw Error(Errc::format, path.string() + ":" + std::to_string(n) + ": expected 3 or 4 tab-separated fields");
    }
    if (f[0].empty() || f[1].empty()) throw Error(Errc::format, path.string() + ":" + std::to_string(n) + ": empty id");
    if (!seen.emplace(f[0], f[1]).second) {
      throw Error(Errc::format, path.string() + ":" + std::to_string(n) + ": duplicate (scene, frame) pair");
    }
    const fs::path file = resolve(path, f[2]);
    if (check_paths && !fs::exists(file)) throw Error(Errc::io, "descriptor file not found: " + file.string());
    auto [it, fresh] = position.try_emplace(f[0], scenes.size());
    if (fresh) scenes.push_back({f[0], {}});
    scenes[it->second].frames.push_back({f[1], file.string(), f.size() == 4 ? f[3] : std::string{}});
  }
  return scenes;
}

/// Writes frame paths verbatim, one frame per line.
inline void write_manifest(const fs::path& path, std::span<const SceneRecord> scenes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  for (const auto& s : scenes) {
    for (const auto& f : s.frames) {
      out << s.scene_id << '\t' << f.frame_id << '\t' << f.path;
      if (!f.shot_id.empty()) out << '\t' << f.shot_id;
      out << '\n';
    }
  }
}

struct QueryRef {
  std::string id;
  std::string path;
};

/// query_id<TAB>descriptor_path
inline std::vector<QueryRef> read_query_list(const fs::path& path) {
  std::vector<QueryRef> out;
  for (const auto& [n, line] : content_lines(path)) {
    const auto f = split(line, '\t');
    if (f.size() != 2) throw Error(Errc::format, path.string() + ":" + std::to_string(n) + ": expected query_id<TAB>path");
    out.push_back({f[0], resolve(path, f[1]).string()});
  }
  return out;
}

inline std::vector<Query> load_queries(const fs::path& path) {
  std::vector<Query> out;
  for (const auto& q : read_query_list(path)) out.push_back({q.id, load_descriptors(q.path)});
  return out;
}

/// query_id<TAB>scene_id[,scene_id...]
inline GroundTruth read_ground_truth(const fs::path& path) {
  GroundTruth gt;
  for (const auto& [n, line] : content_lines(path)) {
    const auto f = split(line, '\t');
    if (f.size() != 2) throw Error(Errc::format, path.string() + ":" + std::to_string(n) + ": expected query_id<TAB>scenes");
    auto& rel = gt[f[0]];
    for (auto& s : split(f[1], ',')) {
      if (!s.empty()) rel.insert(s);
    }
    if (rel.empty()) throw Error(Errc::format, "query " + f[0] + " has no relevant scenes");
  }
  return gt;
}

inline std::string format_ground_truth(const GroundTruth& gt) {
  std::ostringstream out;
  for (const auto& [q, scenes] : gt) {
    out << q << '\t';
    bool first = true;
    for (const auto& s : scenes) {
      if (!first) out << ',';
      out << s;
      first = false;
    }
    out << '\n';
  }
  return out.str();
}

/// Loads frames from QIVD files.
struct FileLoader {
  DescriptorSet operator()(const FrameRef& f) const { return load_descriptors(f.path); }
};

/// Serves frames from memory, keyed by FrameRef::path.
struct MemoryLoader {
  const std::map<std::string, DescriptorSet>* store = nullptr;

  const DescriptorSet& operator()(const FrameRef& f) const {
    auto it = store->find(f.path);
    if (it == store->end()) throw Error(Errc::io, "no in-memory frame " + f.path);
    return it->second;
  }
};

}  // namespace qbiv
