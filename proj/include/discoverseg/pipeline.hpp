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
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/eval.hpp"
#include "discoverseg/ggsm.hpp"
#include "discoverseg/ingest.hpp"
#include "discoverseg/plot.hpp"
#include "discoverseg/uasa.hpp"

// The end-to-end commands behind the CLI: fit, discover, eval, plot.
namespace discoverseg::pipeline {

namespace fs = std::filesystem;

enum class Mode { kTrain, kInfer };

struct RunConfig {
  fs::path manifest;
  fs::path known_config;
  // Defaults to label_map.txt beside the manifest.
  std::optional<fs::path> label_map;
  fs::path model;
  fs::path out;
  // Per-video frame predictions (<video_id>.txt over known names and UNK),
  // read in infer mode.
  fs::path predictions;
  Mode mode = Mode::kTrain;
  // Videos processed by discover/eval; fit always uses the train split.
  ingest::Split split = ingest::Split::kTest;
  ggsm::GgsmConfig ggsm;
  std::size_t k_max = 20;
  std::uint64_t seed = uasa::kDefaultSeed;
  bool init_from_gmm = false;
  std::size_t jobs = 0;
  bool timing = false;
};

// Wall-clock per named stage, accumulated across calls.
class StageTimer {
 public:
  template <typename F>
  decltype(auto) time(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Record {
      StageTimer* self;
      const std::string& stage;
      std::chrono::steady_clock::time_point t0;
      ~Record() {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::lock_guard lock(self->mu_);
        self->seconds_[stage] += s;
      }
    } record{this, stage, t0};
    return f();
  }

  void print(std::ostream& os) const {
    std::lock_guard lock(mu_);
    char buf[128];
    for (const auto& [stage, s] : seconds_) {
      std::snprintf(buf, sizeof buf, "time.%s=%.3fs\n", stage.c_str(), s);
      os << buf;
    }
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, double> seconds_;
};

// Runs body(i) for i in [0, n) on up to `jobs` threads. The first exception
// in index order is rethrown after all workers finish.
template <typename Body>
void parallel_for(std::size_t n, std::size_t jobs, Body body) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Dataset {
  ingest::LabelMap label_map;
  ingest::KnownActionConfig known;
  std::shared_ptr<const LabelSpace> space;
  ingest::DatasetManifest manifest;
};

inline Dataset load_dataset(const RunConfig& cfg) {
  Dataset ds;
  ds.manifest = ingest::read_manifest(cfg.manifest);
  ds.label_map = ingest::read_label_map(cfg.label_map.value_or(cfg.manifest.parent_path() / "label_map.txt"));
  ds.known = ingest::read_known_config(cfg.known_config, ds.label_map);
  ds.space = ingest::known_label_space(ds.label_map, ds.known);
  return ds;
}

// Unknown segments of one video with their mean embeddings.
struct VideoDiscovery {
  ggsm::Discovery discovery;
  std::vector<uasa::SegmentMean> unknown_means;
};

inline VideoDiscovery discover_video(const Matrix& embeddings, const FrameLabeling& labels,
                                     const ggsm::GgsmConfig& config, const std::string& video_id) {
  const auto known = ggsm::known_spans(labels);
  ggsm::Discovery d = ggsm::discover_unknown_segments(embeddings, labels, known, config);
  const auto unknown = d.unknown_intervals(labels.space().unk_id());
  auto means = uasa::segment_means(embeddings, unknown, video_id);
  return {std::move(d), std::move(means)};
}

struct FitResult {
  uasa::UasaModel model;
  std::size_t train_videos = 0;
  std::size_t unknown_segments = 0;
};

// Training-split discovery against ground-truth known spans, then UASA on the
// pooled unknown segment means. Writes cfg.model when it is set.
inline FitResult run_fit(const RunConfig& cfg, std::ostream& log) {
  StageTimer timer;
  const Dataset ds = timer.time("load", [&] { return load_dataset(cfg); });
  const auto train = ds.manifest.with_split(ingest::Split::kTrain);
  if (train.empty()) throw Error("nothing to discover: empty train split", ErrorKind::kNothingToDiscover);

  std::vector<std::vector<uasa::SegmentMean>> per_video(train.size());
  parallel_for(train.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = train[i];
    const Matrix emb = timer.time("read", [&] { return ingest::read_embeddings(e.embedding_path); });
    const auto raw = ingest::read_labels(e.label_path, ds.label_map);
    const FrameLabeling observed = ingest::apply_known_config(raw, ds.label_map, ds.known);
    per_video[i] = timer.time("ggsm", [&] { return discover_video(emb, observed, cfg.ggsm, e.video_id); }).unknown_means;
  });
  std::vector<uasa::SegmentMean> means;
  for (auto& v : per_video) std::move(v.begin(), v.end(), std::back_inserter(means));
  if (means.empty()) throw Error("nothing to discover", ErrorKind::kNothingToDiscover);

  uasa::UasaOptions opt;
  opt.seed = cfg.seed;
  opt.k_max = cfg.k_max;
  opt.init_from_gmm = cfg.init_from_gmm;
  FitResult r{timer.time("uasa", [&] { return uasa::fit_uasa(means, opt); }), train.size(), means.size()};
  if (!cfg.model.empty()) uasa::write_model(cfg.model, r.model);
  log << "videos=" << r.train_videos << " unknown_segments=" << r.unknown_segments << "\n";
  log << "K=" << r.model.k << "\n";
  if (cfg.timing) timer.print(log);
  return r;
}

// Final labels for one video: majority labels per interval, with unknown
// intervals replaced by their nearest discovered class.
inline FrameLabeling label_video(const Matrix& embeddings, const FrameLabeling& frame_labels,
                                 const uasa::UasaModel& model, const ggsm::GgsmConfig& config,
                                 const std::string& video_id = {}) {
  if (embeddings.cols() != model.dim())
    throw Error("embeddings of '" + video_id + "' have dimension " + std::to_string(embeddings.cols()) +
                    ", model expects " + std::to_string(model.dim()),
                ErrorKind::kModelMismatch);
  const VideoDiscovery vd = discover_video(embeddings, frame_labels, config, video_id);
  auto out_space = std::make_shared<const LabelSpace>(frame_labels.space().with_discovered(model.k));
  const auto discovered = uasa::assign_segments(model, vd.unknown_means, *out_space);
  std::vector<Segment> segments = vd.discovery.segments;
  std::size_t u = 0;
  for (Segment& s : segments)
    if (s.label == frame_labels.space().unk_id()) s.label = discovered[u++];
  return labels_from_segments(segments, static_cast<Frame>(frame_labels.size()), std::move(out_space));
}

inline std::size_t run_discover(const RunConfig& cfg, std::ostream& log) {
  StageTimer timer;
  const Dataset ds = timer.time("load", [&] { return load_dataset(cfg); });
  const uasa::UasaModel model = uasa::read_model(cfg.model);
  const auto videos = ds.manifest.with_split(cfg.split);
  parallel_for(videos.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = videos[i];
    const Matrix emb = timer.time("read", [&] { return ingest::read_embeddings(e.embedding_path); });
    const FrameLabeling labels = [&] {
      if (cfg.mode == Mode::kInfer) return ingest::read_labels(cfg.predictions / (e.video_id + ".txt"), ds.space);
      return ingest::apply_known_config(ingest::read_labels(e.label_path, ds.label_map), ds.label_map, ds.known);
    }();
    if (labels.size() != emb.rows())
      throw Error("labels of '" + e.video_id + "' cover " + std::to_string(labels.size()) + " frames, embeddings " +
                  std::to_string(emb.rows()));
    const FrameLabeling out = timer.time("discover", [&] { return label_video(emb, labels, model, cfg.ggsm, e.video_id); });
    ingest::write_labels(cfg.out / (e.video_id + ".txt"), out);
  });
  log << "videos=" << videos.size() << " K=" << model.k << "\n";
  if (cfg.timing) timer.print(log);
  return videos.size();
}

// Prediction names mapped into the evaluation id convention: known names keep
// their dataset id, UNK and UNK_k become cluster ids past the largest one.
inline std::vector<LabelId> read_prediction(const fs::path& path, const ingest::LabelMap& map,
                                            const ingest::KnownActionConfig& known) {
  const LabelId base = map.entries().rbegin()->first + 1;
  auto lookup = [&](const std::string& name) -> std::optional<LabelId> {
    if (known.known_names.contains(name)) return map.find(name);
    const std::string unk = LabelSpace::kUnkName;
    if (name == unk) return base;
    if (name.rfind(unk + "_", 0) == 0) {
      try {
        const auto k = ingest::parse_int<LabelId>(std::string_view(name).substr(unk.size() + 1), "cluster name");
        if (k >= 1) return base + k;
      } catch (const Error&) {
      }
    }
    return std::nullopt;
  };
  try {
    return ingest::parse_label_names(ingest::read_file(path), lookup);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

struct EvalResult {
  eval::MetricsReport metrics;
  eval::ClusterMapping mapping;
  ingest::Report report;
};

inline std::string format_summary(const eval::MetricsReport& m) {
  std::string out = "scope      MoF     Edit    F1@10   F1@25   F1@50\n";
  char buf[64];
  auto cell = [&](const std::optional<double>& v) {
    if (v)
      std::snprintf(buf, sizeof buf, "%8.1f", *v);
    else
      std::snprintf(buf, sizeof buf, "%8s", "n/a");
    return std::string(buf);
  };
  for (auto [name, s] : {std::pair{"known  ", &m.known}, std::pair{"unknown", &m.unknown}})
    out += std::string(name) + cell(s->mof) + cell(s->edit) + cell(s->f1[0]) + cell(s->f1[1]) + cell(s->f1[2]) + "\n";
  return out;
}

// Predictions are read from cfg.predictions; the report goes to cfg.out.
inline EvalResult run_eval(const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  const auto videos = ds.manifest.with_split(cfg.split);
  std::vector<eval::EvalVideo> data(videos.size());
  parallel_for(videos.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = videos[i];
    const fs::path pred_path = cfg.predictions / (e.video_id + ".txt");
    if (!fs::exists(pred_path)) throw Error("missing prediction " + pred_path.string());
    data[i].pred = read_prediction(pred_path, ds.label_map, ds.known);
    data[i].gt = ingest::read_labels(e.label_path, ds.label_map);
    if (data[i].pred.size() != data[i].gt.size())
      throw Error("prediction for '" + e.video_id + "' has " + std::to_string(data[i].pred.size()) +
                  " frames, ground truth " + std::to_string(data[i].gt.size()));
  });
  std::set<LabelId> known_ids;
  for (const auto& n : ds.known.known_names) known_ids.insert(*ds.label_map.find(n));

  EvalResult r;
  r.mapping = eval::match_unknown_clusters(data, known_ids);
  if (r.mapping.no_unknown_frames) log << "warning: ground truth has no unknown frames\n";
  r.metrics = eval::masked_report(data, known_ids, r.mapping);
  r.report = eval::to_report(r.metrics);
  if (!cfg.out.empty()) ingest::write_report(cfg.out, r.report);
  log << format_summary(r.metrics);
  return r;
}

// Names listed one per line, without label-map validation.
inline std::set<std::string> read_name_list(const fs::path& path) {
  std::set<std::string> names;
  for (const std::string& line : ingest::split_lines(ingest::read_file(path))) {
    const std::string n(ingest::trim(line));
    if (!n.empty()) names.insert(n);
  }
  return names;
}

inline std::vector<std::string> read_names(const fs::path& path) {
  std::vector<std::string> out;
  for (const std::string& line : ingest::split_lines(ingest::read_file(path))) {
    out.emplace_back(ingest::trim(line));
  }
  while (!out.empty() && out.back().empty()) out.pop_back();
  if (out.empty()) throw Error(path.string() + ": empty label file");
  return out;
}

// Without a known list, any name not starting with UNK counts as known.
inline std::string run_plot(const fs::path& gt_path, const fs::path& pred_path, const fs::path& out,
                            const std::optional<fs::path>& known_list) {
  std::vector<plot::TimelineRow> rows{{"ground truth", read_names(gt_path)}, {"prediction", read_names(pred_path)}};
  if (rows[0].labels.size() != rows[1].labels.size())
    throw Error("ground truth has " + std::to_string(rows[0].labels.size()) + " frames, prediction " +
                std::to_string(rows[1].labels.size()));
  std::optional<std::set<std::string>> known;
  if (known_list) known = read_name_list(*known_list);
  auto is_known = [&](const std::string& n) {
    if (known) return known->contains(n);
    return n.rfind(LabelSpace::kUnkName, 0) != 0;
  };
  std::string svg = plot::render_timeline(rows, is_known);
  if (!out.empty()) ingest::write_file_atomic(out, svg);
  return svg;
}

}  // namespace discoverseg::pipeline
