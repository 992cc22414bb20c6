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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/ingest.hpp"
#include "discoverseg/matrix.hpp"

// Seeded synthetic datasets: isotropic Gaussian class clusters laid out as
// action sequences, with some unknown runs holding several unknown actions.
namespace discoverseg::synth {

struct SynthConfig {
  std::size_t n_videos = 40;
  std::size_t n_known = 13;
  std::size_t n_unknown = 6;
  std::size_t dim = 16;
  std::pair<std::size_t, std::size_t> frames_per_segment{40, 60};
  std::pair<std::size_t, std::size_t> segments_per_video{8, 12};
  double class_sep = 12.0;
  double noise_sigma = 1.0;
  double multi_unknown_frac = 0.333;
  // Chance that a new action run is unknown (never directly after another
  // unknown run).
  double unknown_run_prob = 0.35;
  double test_fraction = 0.3;
  std::uint64_t seed = 42;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw Error(field + ": " + why); };
    if (n_videos < 1) fail("n_videos", "must be at least 1");
    if (n_known < 1) fail("n_known", "must be at least 1");
    if (n_unknown < 1) fail("n_unknown", "must be at least 1");
    if (dim < 1) fail("dim", "must be at least 1");
    if (frames_per_segment.first < 1 || frames_per_segment.first > frames_per_segment.second)
      fail("frames_per_segment", "needs 1 <= min <= max");
    if (segments_per_video.first < 1 || segments_per_video.first > segments_per_video.second)
      fail("segments_per_video", "needs 1 <= min <= max");
    if (!(class_sep > 0.0)) fail("class_sep", "must be positive");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be non-negative");
    if (!(multi_unknown_frac >= 0.0 && multi_unknown_frac <= 1.0)) fail("multi_unknown_frac", "must lie in [0,1]");
    if (!(unknown_run_prob >= 0.0 && unknown_run_prob <= 1.0)) fail("unknown_run_prob", "must lie in [0,1]");
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) fail("test_fraction", "must lie in [0,1]");
  }
};

namespace detail {

inline std::pair<std::size_t, std::size_t> parse_range(std::string_view v, const std::string& key) {
  const std::size_t comma = v.find(',');
  if (comma == std::string_view::npos) throw Error(key + ": expected 'min,max'");
  return {ingest::parse_int<std::size_t>(v.substr(0, comma), key),
          ingest::parse_int<std::size_t>(v.substr(comma + 1), key)};
}

}  // namespace detail

// "key = value" lines; '#' starts a comment. Unlisted keys keep defaults.
inline SynthConfig parse_synth_config(std::string_view text) {
  SynthConfig c;
  std::size_t lineno = 0;
  for (const std::string& raw : ingest::split_lines(text)) {
    ++lineno;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = ingest::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw Error("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key(ingest::trim(line.substr(0, eq)));
    const std::string_view v = ingest::trim(line.substr(eq + 1));
    try {
      if (key == "n_videos") c.n_videos = ingest::parse_int<std::size_t>(v, key);
      else if (key == "n_known") c.n_known = ingest::parse_int<std::size_t>(v, key);
      else if (key == "n_unknown") c.n_unknown = ingest::parse_int<std::size_t>(v, key);
      else if (key == "dim") c.dim = ingest::parse_int<std::size_t>(v, key);
      else if (key == "frames_per_segment") c.frames_per_segment = detail::parse_range(v, key);
      else if (key == "segments_per_video") c.segments_per_video = detail::parse_range(v, key);
      else if (key == "class_sep") c.class_sep = ingest::parse_double(v, key);
      else if (key == "noise_sigma") c.noise_sigma = ingest::parse_double(v, key);
      else if (key == "multi_unknown_frac") c.multi_unknown_frac = ingest::parse_double(v, key);
      else if (key == "unknown_run_prob") c.unknown_run_prob = ingest::parse_double(v, key);
      else if (key == "test_fraction") c.test_fraction = ingest::parse_double(v, key);
      else if (key == "seed") c.seed = ingest::parse_int<std::uint64_t>(v, key);
      else throw Error("unknown field");
    } catch (const Error& e) {
      throw Error("config field '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

inline std::string format_synth_config(const SynthConfig& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "n_videos = %zu\nn_known = %zu\nn_unknown = %zu\ndim = %zu\nframes_per_segment = %zu,%zu\n"
                "segments_per_video = %zu,%zu\nclass_sep = %.17g\nnoise_sigma = %.17g\nmulti_unknown_frac = %.17g\n"
                "unknown_run_prob = %.17g\ntest_fraction = %.17g\nseed = %llu\n",
                c.n_videos, c.n_known, c.n_unknown, c.dim, c.frames_per_segment.first, c.frames_per_segment.second,
                c.segments_per_video.first, c.segments_per_video.second, c.class_sep, c.noise_sigma,
                c.multi_unknown_frac, c.unknown_run_prob, c.test_fraction,
                static_cast<unsigned long long>(c.seed));
  return buf;
}

struct SynthVideo {
  std::string id;
  Matrix embeddings;
  // Full ground truth, ids from the dataset label map.
  std::vector<LabelId> gt;
  // Known classes plus the single UNK class.
  FrameLabeling observed;
  ingest::Split split;
};

struct SynthDataset {
  ingest::LabelMap label_map;
  ingest::KnownActionConfig known;
  Matrix class_means;
  std::vector<SynthVideo> videos;

  bool is_unknown_class(LabelId id) const { return !known.known_names.contains(label_map.name(id)); }
};

inline std::string class_name(std::size_t i, std::size_t n_known) {
  char buf[32];
  if (i < n_known)
    std::snprintf(buf, sizeof buf, "known_%02zu", i);
  else
    std::snprintf(buf, sizeof buf, "unknown_%02zu", i - n_known);
  return buf;
}

// Rejection-sampled class means, pairwise at least class_sep apart. The
// proposal scale puts the typical pairwise distance near 1.5 * class_sep.
inline Matrix draw_class_means(std::size_t count, std::size_t dim, double class_sep, std::mt19937_64& rng) {
  constexpr std::size_t kMaxAttempts = 100000;
  std::normal_distribution<double> normal(0.0, 1.5 * class_sep / std::sqrt(2.0 * static_cast<double>(dim)));
  Matrix means(count, dim);
  std::vector<double> cand(dim);
  std::size_t attempts = 0;
  for (std::size_t c = 0; c < count;) {
    if (++attempts > kMaxAttempts) throw Error("cannot separate classes");
    for (double& v : cand) v = normal(rng);
    bool ok = true;
    for (std::size_t o = 0; o < c && ok; ++o) ok = euclidean_distance(cand, means.row(o)) >= class_sep;
    if (!ok) continue;
    std::copy(cand.begin(), cand.end(), means.row(c).begin());
    ++c;
  }
  return means;
}

inline SynthDataset generate_dataset(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  SynthDataset ds;
  const std::size_t n_classes = config.n_known + config.n_unknown;
  for (std::size_t i = 0; i < n_classes; ++i) {
    ds.label_map.add(class_name(i, config.n_known), static_cast<LabelId>(i));
    if (i < config.n_known) ds.known.known_names.insert(class_name(i, config.n_known));
  }
  ds.class_means = draw_class_means(n_classes, config.dim, config.class_sep, rng);

  const auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(config.n_videos)));
  auto uniform = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  auto coin = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };
  std::normal_distribution<double> noise(0.0, 1.0);

  for (std::size_t v = 0; v < config.n_videos; ++v) {
    // Action sequence: known segments interleaved with unknown runs.
    const std::size_t target = uniform(config.segments_per_video.first, config.segments_per_video.second);
    std::vector<std::size_t> actions;
    bool last_unknown_run = false;
    while (actions.size() < target) {
      if (!last_unknown_run && coin(config.unknown_run_prob)) {
        std::size_t m = 1;
        if (config.n_unknown >= 2 && coin(config.multi_unknown_frac)) m = std::min<std::size_t>(config.n_unknown, coin(0.3) ? 3 : 2);
        std::size_t prev = n_classes;
        for (std::size_t i = 0; i < m; ++i) {
          std::size_t u;
          do u = config.n_known + uniform(0, config.n_unknown - 1);
          while (u == prev);
          actions.push_back(u);
          prev = u;
        }
        last_unknown_run = true;
      } else {
        std::size_t k;
        do k = uniform(0, config.n_known - 1);
        while (config.n_known > 1 && !actions.empty() && actions.back() == k);
        actions.push_back(k);
        last_unknown_run = false;
      }
    }

    std::vector<LabelId> gt;
    for (std::size_t a : actions) {
      const std::size_t len = uniform(config.frames_per_segment.first, config.frames_per_segment.second);
      gt.insert(gt.end(), len, static_cast<LabelId>(a));
    }
    Matrix emb(gt.size(), config.dim);
    for (std::size_t t = 0; t < gt.size(); ++t) {
      auto mu = ds.class_means.row(static_cast<std::size_t>(gt[t]));
      for (std::size_t d = 0; d < config.dim; ++d) {
        const double x = mu[d] + (config.noise_sigma > 0.0 ? config.noise_sigma * noise(rng) : 0.0);
        // Stored at float precision so on-disk and in-memory copies agree.
        emb(t, d) = static_cast<float>(x);
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "video_%03zu", v);
    FrameLabeling observed = ingest::apply_known_config(gt, ds.label_map, ds.known);
    const auto split = v + n_test >= config.n_videos ? ingest::Split::kTest : ingest::Split::kTrain;
    ds.videos.push_back({id, std::move(emb), std::move(gt), std::move(observed), split});
  }
  // Class means at float precision as well, so noise_sigma = 0 frames equal them.
  for (double& m : ds.class_means.data()) m = static_cast<float>(m);
  return ds;
}

struct UnknownRunStats {
  std::size_t runs = 0;
  // Runs holding two or more distinct consecutive unknown actions.
  std::size_t multi_action_runs = 0;
};

template <typename IsUnknown>
UnknownRunStats unknown_run_stats(std::span<const LabelId> gt, IsUnknown is_unknown) {
  UnknownRunStats s;
  std::size_t actions_in_run = 0;
  auto close = [&] {
    if (actions_in_run > 0) {
      ++s.runs;
      s.multi_action_runs += actions_in_run >= 2;
    }
    actions_in_run = 0;
  };
  if (gt.empty()) return s;
  for (const Segment& seg : segments_from_labels(gt)) {
    if (is_unknown(seg.label))
      ++actions_in_run;
    else
      close();
  }
  close();
  return s;
}

// Layout: label_map.txt, known.txt, manifest.tsv, emb/<id>.emb, labels/<id>.txt.
inline void write_dataset(const std::filesystem::path& dir, const SynthDataset& ds) {
  std::filesystem::create_directories(dir / "emb");
  std::filesystem::create_directories(dir / "labels");
  ingest::write_label_map(dir / "label_map.txt", ds.label_map);
  ingest::write_known_config(dir / "known.txt", ds.known);
  ingest::DatasetManifest manifest;
  for (const SynthVideo& v : ds.videos) {
    const std::filesystem::path emb = std::filesystem::path("emb") / (v.id + ".emb");
    const std::filesystem::path lab = std::filesystem::path("labels") / (v.id + ".txt");
    ingest::write_embeddings(dir / emb, v.embeddings);
    ingest::write_labels(dir / lab, v.gt, ds.label_map);
    manifest.videos.push_back({v.id, emb, lab, v.split});
  }
  ingest::write_manifest(dir / "manifest.tsv", manifest);
}

}  // namespace discoverseg::synth
