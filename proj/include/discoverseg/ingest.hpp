// Copyright 2026 The discoverseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/matrix.hpp"

namespace discoverseg::ingest {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Raw file helpers

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file and renames it over the target.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    pos = nl + 1;
  }
  return lines;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, const std::string& what) {
  s = trim(s);
  std::string buf(s);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(buf.c_str(), &end);
  if (buf.empty() || end != buf.c_str() + buf.size() || errno == ERANGE)
    throw Error("cannot parse number '" + buf + "' in " + what);
  return v;
}

template <typename Int>
Int parse_int(std::string_view s, const std::string& what) {
  s = trim(s);
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw Error("cannot parse integer '" + std::string(s) + "' in " + what);
  return v;
}

// ---------------------------------------------------------------------------
// Embeddings: "EMB1", u32 T, u32 D, then T*D little-endian float32, row-major.

inline constexpr std::array<char, 4> kEmbeddingMagic{'E', 'M', 'B', '1'};
inline constexpr std::size_t kEmbeddingHeaderBytes = 12;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline bool looks_like_text(std::string_view bytes) {
  return std::all_of(bytes.begin(), bytes.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u == '\n' || u == '\r' || u == '\t' || (u >= 0x20 && u < 0x7F);
  });
}

inline Matrix parse_text_embeddings(std::string_view text) {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (const std::string& raw : split_lines(text)) {
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    std::istringstream ss{std::string(line)};
    std::string tok;
    std::size_t n = 0;
    while (ss >> tok) {
      const double v = parse_double(tok, "embedding text");
      if (!std::isfinite(v)) throw Error("non-finite embedding");
      values.push_back(v);
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw Error("ragged embedding rows at frame " + std::to_string(rows));
    ++rows;
  }
  if (rows == 0) throw Error("empty sequence");
  return Matrix(rows, cols, std::move(values));
}

}  // namespace detail

inline std::string encode_embeddings(const Matrix& m) {
  if (m.rows() == 0) throw Error("empty sequence");
  if (!m.all_finite()) throw Error("non-finite embedding");
  std::string out(kEmbeddingMagic.begin(), kEmbeddingMagic.end());
  out.reserve(kEmbeddingHeaderBytes + 4 * m.rows() * m.cols());
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline Matrix decode_embeddings(std::string_view bytes) {
  if (bytes.size() < 4 || !std::equal(kEmbeddingMagic.begin(), kEmbeddingMagic.end(), bytes.begin())) {
    if (!bytes.empty() && detail::looks_like_text(bytes)) return detail::parse_text_embeddings(bytes);
    if (bytes.empty()) throw Error("empty sequence");
    throw Error("unrecognized format");
  }
  if (bytes.size() < kEmbeddingHeaderBytes) throw Error("truncated file");
  const std::uint64_t rows = detail::get_u32(bytes, 4);
  const std::uint64_t cols = detail::get_u32(bytes, 8);
  if (bytes.size() != kEmbeddingHeaderBytes + 4 * rows * cols) throw Error("truncated file");
  if (rows == 0) throw Error("empty sequence");
  Matrix m(rows, cols);
  auto data = m.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float f = std::bit_cast<float>(detail::get_u32(bytes, kEmbeddingHeaderBytes + 4 * i));
    if (!std::isfinite(f)) throw Error("non-finite embedding");
    data[i] = f;
  }
  return m;
}

inline Matrix read_embeddings(const fs::path& path) {
  try {
    return decode_embeddings(read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline void write_embeddings(const fs::path& path, const Matrix& m) {
  write_file_atomic(path, encode_embeddings(m));
}

// ---------------------------------------------------------------------------
// Label map: one "name id" pair per line.

class LabelMap {
 public:
  LabelMap() = default;

  void add(const std::string& name, LabelId id) {
    if (id < 0) throw Error("negative label id for '" + name + "'");
    if (!by_name_.emplace(name, id).second) throw Error("duplicate label name '" + name + "'");
    if (!by_id_.emplace(id, name).second) throw Error("duplicate label id " + std::to_string(id));
  }

  std::optional<LabelId> find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(LabelId id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw Error("label id " + std::to_string(id) + " not in label map");
    return it->second;
  }

  bool contains(LabelId id) const { return by_id_.contains(id); }
  std::size_t size() const noexcept { return by_id_.size(); }
  // Entries in ascending id order.
  const std::map<LabelId, std::string>& entries() const noexcept { return by_id_; }

 private:
  std::unordered_map<std::string, LabelId> by_name_;
  std::map<LabelId, std::string> by_id_;
};

inline LabelMap parse_label_map(std::string_view text) {
  LabelMap map;
  std::size_t lineno = 0;
  for (const std::string& raw : split_lines(text)) {
    ++lineno;
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    const std::size_t sp = line.find_last_of(" \t");
    if (sp == std::string_view::npos) throw Error("malformed label map at line " + std::to_string(lineno));
    const std::string name(trim(line.substr(0, sp)));
    map.add(name, parse_int<LabelId>(line.substr(sp + 1), "label map line " + std::to_string(lineno)));
  }
  if (map.size() == 0) throw Error("empty label map");
  return map;
}

inline LabelMap read_label_map(const fs::path& path) { return parse_label_map(read_file(path)); }

inline std::string format_label_map(const LabelMap& map) {
  std::string out;
  for (const auto& [id, name] : map.entries()) out += name + " " + std::to_string(id) + "\n";
  return out;
}

inline void write_label_map(const fs::path& path, const LabelMap& map) {
  write_file_atomic(path, format_label_map(map));
}

// ---------------------------------------------------------------------------
// Label files: one class name per line.

template <typename Lookup>
std::vector<LabelId> parse_label_names(std::string_view text, Lookup lookup) {
  std::vector<std::string> lines = split_lines(text);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw Error("empty label file");
  std::vector<LabelId> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string name(trim(lines[i]));
    std::optional<LabelId> id = lookup(name);
    if (!id) throw Error("unknown label at line " + std::to_string(i + 1));
    out.push_back(*id);
  }
  return out;
}

// Raw dataset labels, ids from the label map.
inline std::vector<LabelId> read_labels(const fs::path& path, const LabelMap& map) {
  try {
    return parse_label_names(read_file(path), [&](const std::string& n) { return map.find(n); });
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// Labels over a known + UNK (+ discovered) space.
inline FrameLabeling read_labels(const fs::path& path, std::shared_ptr<const LabelSpace> space) {
  try {
    auto ids = parse_label_names(read_file(path), [&](const std::string& n) { return space->find(n); });
    return FrameLabeling(std::move(ids), std::move(space));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline std::string format_labels(const FrameLabeling& labeling) {
  std::string out;
  for (LabelId id : labeling.labels()) out += labeling.space().name(id) + "\n";
  return out;
}

inline void write_labels(const fs::path& path, const FrameLabeling& labeling) {
  write_file_atomic(path, format_labels(labeling));
}

inline void write_labels(const fs::path& path, std::span<const LabelId> labels, const LabelMap& map) {
  std::string out;
  for (LabelId id : labels) out += map.name(id) + "\n";
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Known-action config: one class name per line.

struct KnownActionConfig {
  std::set<std::string> known_names;
};

inline KnownActionConfig parse_known_config(std::string_view text, const LabelMap& map) {
  KnownActionConfig cfg;
  std::size_t lineno = 0;
  for (const std::string& raw : split_lines(text)) {
    ++lineno;
    const std::string name(trim(raw));
    if (name.empty()) continue;
    if (!map.find(name)) throw Error("known action '" + name + "' (line " + std::to_string(lineno) + ") not in label map");
    cfg.known_names.insert(name);
  }
  if (cfg.known_names.empty()) throw Error("empty known-action config");
  return cfg;
}

inline KnownActionConfig read_known_config(const fs::path& path, const LabelMap& map) {
  return parse_known_config(read_file(path), map);
}

inline void write_known_config(const fs::path& path, const KnownActionConfig& cfg) {
  std::string out;
  for (const auto& n : cfg.known_names) out += n + "\n";
  write_file_atomic(path, out);
}

// Label space for a known config: known classes ordered by their raw id.
inline std::shared_ptr<const LabelSpace> known_label_space(const LabelMap& map, const KnownActionConfig& cfg,
                                                           std::size_t num_discovered = 0) {
  if (cfg.known_names.empty()) throw Error("empty known-action config");
  std::vector<std::string> names;
  for (const auto& [id, name] : map.entries())
    if (cfg.known_names.contains(name)) names.push_back(name);
  if (names.size() != cfg.known_names.size()) throw Error("known-action config names missing from label map");
  return std::make_shared<const LabelSpace>(std::move(names), num_discovered);
}

// Frames whose class is not listed as known collapse onto the single UNK id.
inline FrameLabeling apply_known_config(std::span<const LabelId> raw, const LabelMap& map,
                                        const KnownActionConfig& cfg) {
  auto space = known_label_space(map, cfg);
  std::unordered_map<LabelId, LabelId> remap;
  for (const auto& [id, name] : map.entries())
    remap[id] = space->find(name).value_or(space->unk_id());
  std::vector<LabelId> out;
  out.reserve(raw.size());
  for (LabelId id : raw) {
    auto it = remap.find(id);
    if (it == remap.end()) throw Error("label id " + std::to_string(id) + " not in label map");
    out.push_back(it->second);
  }
  return FrameLabeling(std::move(out), std::move(space));
}

// ---------------------------------------------------------------------------
// Manifest: "video_id<TAB>emb_path<TAB>label_path<TAB>split" per line.
// Relative paths resolve against the manifest's directory.

enum class Split { kTrain, kTest };

inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw Error("unknown split '" + std::string(s) + "'");
}

struct ManifestEntry {
  std::string video_id;
  fs::path embedding_path;
  fs::path label_path;
  Split split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> videos;

  std::vector<ManifestEntry> with_split(Split s) const {
    std::vector<ManifestEntry> out;
    std::copy_if(videos.begin(), videos.end(), std::back_inserter(out),
                 [&](const ManifestEntry& e) { return e.split == s; });
    return out;
  }
};

inline DatasetManifest parse_manifest(std::string_view text, const fs::path& base_dir, bool check_paths = true) {
  DatasetManifest m;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  for (const std::string& raw : split_lines(text)) {
    ++lineno;
    if (trim(raw).empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t tab = raw.find('\t', pos);
      fields.emplace_back(raw.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 4) throw Error("manifest line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
    ManifestEntry e{fields[0], fields[1], fields[2], parse_split(trim(fields[3]))};
    if (e.video_id.empty()) throw Error("manifest line " + std::to_string(lineno) + ": empty video id");
    if (!seen.insert(e.video_id).second) throw Error("duplicate video id '" + e.video_id + "'");
    if (e.embedding_path.is_relative()) e.embedding_path = base_dir / e.embedding_path;
    if (e.label_path.is_relative()) e.label_path = base_dir / e.label_path;
    if (check_paths) {
      for (const fs::path& p : {e.embedding_path, e.label_path})
        if (!fs::exists(p)) throw Error("missing file " + p.string());
    }
    m.videos.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest read_manifest(const fs::path& path, bool check_paths = true) {
  return parse_manifest(read_file(path), path.parent_path(), check_paths);
}

// Paths are written as given; callers pass manifest-relative paths when they
// want a relocatable dataset.
inline std::string format_manifest(const DatasetManifest& m) {
  std::string out;
  for (const auto& e : m.videos)
    out += e.video_id + "\t" + e.embedding_path.generic_string() + "\t" + e.label_path.generic_string() + "\t" +
           to_string(e.split) + "\n";
  return out;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  write_file_atomic(path, format_manifest(m));
}

// ---------------------------------------------------------------------------
// Report: "metric.scope=value" lines in lexicographic key order. Absent values
// are written as "n/a".

using Report = std::map<std::string, std::optional<double>>;

inline std::string format_report(const Report& report) {
  std::string out;
  char buf[64];
  for (const auto& [key, value] : report) {
    if (value) {
      std::snprintf(buf, sizeof buf, "%.4f", *value);
      out += key + "=" + buf + "\n";
    } else {
      out += key + "=n/a\n";
    }
  }
  return out;
}

inline Report parse_report(std::string_view text) {
  Report r;
  std::size_t lineno = 0;
  for (const std::string& raw : split_lines(text)) {
    ++lineno;
    if (trim(raw).empty()) continue;
    const std::size_t eq = raw.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("malformed report line " + std::to_string(lineno));
    const std::string key = raw.substr(0, eq);
    const std::string_view value = trim(std::string_view(raw).substr(eq + 1));
    if (value == "n/a")
      r[key] = std::nullopt;
    else
      r[key] = parse_double(value, "report line " + std::to_string(lineno));
  }
  return r;
}

inline void write_report(const fs::path& path, const Report& report) {
  write_file_atomic(path, format_report(report));
}

inline Report read_report(const fs::path& path) { return parse_report(read_file(path)); }

}  // namespace discoverseg::ingest
