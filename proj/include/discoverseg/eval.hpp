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
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/ingest.hpp"
#include "discoverseg/matrix.hpp"

// Masked segmentation metrics and dataset-level cluster matching.
namespace discoverseg::eval {

// ---------------------------------------------------------------------------
// Hungarian algorithm

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double cost = 0.0;
};

// Minimum-cost one-to-one assignment of min(n, m) pairs. Rectangular inputs
// are padded to square with a constant above every real cost. Pairs are
// returned in row order.
inline Assignment hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  Assignment out;
  if (n == 0 || m == 0) return out;
  if (!cost.all_finite()) throw Error("non-finite cost");

  const std::size_t size = std::max(n, m);
  double pad = 0.0;
  for (double v : cost.data()) pad = std::max(pad, std::abs(v));
  pad = pad + 1.0;
  auto at = [&](std::size_t i, std::size_t j) { return i < n && j < m ? cost(i, j) : pad; };

  // Shortest augmenting path with potentials; 1-based with column 0 as the
  // virtual source.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size + 1, 0.0), v(size + 1, 0.0);
  std::vector<std::size_t> row_of(size + 1, 0), way(size + 1, 0);
  for (std::size_t i = 1; i <= size; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(size + 1, kInf);
    std::vector<char> used(size + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= size; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= size; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= size; ++j) {
    const std::size_t i = row_of[j];
    if (i == 0 || i > n || j > m) continue;
    out.pairs.emplace_back(i - 1, j - 1);
    out.cost += cost(i - 1, j - 1);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

// ---------------------------------------------------------------------------
// Label conventions for evaluation
//
// Ground truth uses dataset class ids. Predictions reuse those ids for known
// classes; every other predicted id (UNK, UNK_k) is a cluster to be matched.

inline constexpr LabelId kIgnore = -1;

// Sentinel for a cluster with no ground-truth partner. Never equals a class id
// or kIgnore.
inline constexpr LabelId unmatched_label(LabelId cluster) { return -2 - cluster; }

struct EvalVideo {
  std::vector<LabelId> pred;
  std::vector<LabelId> gt;
};

struct ClusterMapping {
  std::map<LabelId, LabelId> pairs;
  std::vector<LabelId> unmatched;
  // Set when the ground truth contains no unknown frames at all.
  bool no_unknown_frames = false;

  LabelId apply(LabelId cluster) const {
    auto it = pairs.find(cluster);
    return it == pairs.end() ? unmatched_label(cluster) : it->second;
  }
};

// Overlap between predicted clusters and ground-truth unknown classes over the
// whole dataset, solved for maximum matched frames.
inline ClusterMapping match_unknown_clusters(std::span<const EvalVideo> videos, const std::set<LabelId>& known_ids) {
  std::set<LabelId> clusters, classes;
  for (const EvalVideo& v : videos) {
    if (v.pred.size() != v.gt.size()) throw Error("prediction and ground truth differ in length");
    for (LabelId p : v.pred)
      if (!known_ids.contains(p)) clusters.insert(p);
    for (LabelId g : v.gt)
      if (!known_ids.contains(g)) classes.insert(g);
  }
  ClusterMapping mapping;
  if (classes.empty()) {
    mapping.no_unknown_frames = true;
    mapping.unmatched.assign(clusters.begin(), clusters.end());
    return mapping;
  }
  const std::vector<LabelId> rows(clusters.begin(), clusters.end());
  const std::vector<LabelId> cols(classes.begin(), classes.end());
  std::map<LabelId, std::size_t> row_index, col_index;
  for (std::size_t i = 0; i < rows.size(); ++i) row_index[rows[i]] = i;
  for (std::size_t j = 0; j < cols.size(); ++j) col_index[cols[j]] = j;

  Matrix overlap(rows.size(), cols.size());
  for (const EvalVideo& v : videos)
    for (std::size_t t = 0; t < v.gt.size(); ++t) {
      if (known_ids.contains(v.gt[t]) || known_ids.contains(v.pred[t])) continue;
      overlap(row_index[v.pred[t]], col_index[v.gt[t]]) += 1.0;
    }
  Matrix cost = overlap;
  for (double& c : cost.data()) c = -c;
  std::set<LabelId> matched;
  for (auto [i, j] : hungarian(cost).pairs) {
    mapping.pairs[rows[i]] = cols[j];
    matched.insert(rows[i]);
  }
  for (LabelId r : rows)
    if (!matched.contains(r)) mapping.unmatched.push_back(r);
  return mapping;
}

// ---------------------------------------------------------------------------
// Frame and segment metrics

// Percentage of frames under the mask where pred equals gt; nullopt for an
// empty mask.
inline std::optional<double> mof(std::span<const LabelId> pred, std::span<const LabelId> gt,
                                 std::span<const bool> mask) {
  if (pred.size() != gt.size() || mask.size() != gt.size()) throw Error("sequence lengths differ");
  std::size_t total = 0, correct = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (!mask[t]) continue;
    ++total;
    correct += pred[t] == gt[t];
  }
  if (total == 0) return std::nullopt;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

inline std::size_t levenshtein(std::span<const LabelId> a, std::span<const LabelId> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::vector<LabelId> segment_labels(std::span<const Segment> segments) {
  std::vector<LabelId> out;
  out.reserve(segments.size());
  for (const Segment& s : segments) out.push_back(s.label);
  return out;
}

// 100 * (1 - edit distance / longer length) over segment label sequences.
inline double edit_score(std::span<const Segment> pred, std::span<const Segment> gt) {
  if (pred.empty() && gt.empty()) return 100.0;
  const auto a = segment_labels(pred);
  const auto b = segment_labels(gt);
  const double d = static_cast<double>(levenshtein(a, b));
  return 100.0 * (1.0 - d / static_cast<double>(std::max(a.size(), b.size())));
}

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  F1Counts& operator+=(const F1Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

// Each prediction is compared with its best-IoU ground-truth segment of the
// same label; it is a true positive when that IoU reaches the threshold and
// the segment has not been claimed already.
inline F1Counts f1_counts(std::span<const Segment> pred, std::span<const Segment> gt, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("threshold must lie in (0, 1)");
  F1Counts c;
  std::vector<char> hit(gt.size(), 0);
  for (const Segment& p : pred) {
    double best = -1.0;
    std::size_t best_j = gt.size();
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (gt[j].label != p.label) continue;
      const double iou = iou_unbalanced(p.interval, gt[j].interval);
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best_j < gt.size() && best >= threshold && !hit[best_j]) {
      ++c.tp;
      hit[best_j] = 1;
    } else {
      ++c.fp;
    }
  }
  c.fn = gt.size() - static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  return c;
}

// F1 in percent; nullopt when there is neither a prediction nor a reference.
inline std::optional<double> f1_from_counts(const F1Counts& c) {
  if (c.tp + c.fp == 0 && c.tp + c.fn == 0) return std::nullopt;
  const double p = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double r = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (p + r == 0.0) return 0.0;
  return 100.0 * 2.0 * p * r / (p + r);
}

inline double f1_at(std::span<const Segment> pred, std::span<const Segment> gt, double threshold) {
  return f1_from_counts(f1_counts(pred, gt, threshold)).value_or(100.0);
}

// Segments of a sequence in which kIgnore runs only separate segments.
inline std::vector<Segment> masked_segments(std::span<const LabelId> labels) {
  std::vector<Segment> out;
  if (labels.empty()) return out;
  for (const Segment& s : segments_from_labels(labels))
    if (s.label != kIgnore) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------
// Masked report

inline constexpr std::array<double, 3> kF1Thresholds{0.10, 0.25, 0.50};

struct ScopeMetrics {
  std::optional<double> mof;
  std::optional<double> edit;
  std::array<std::optional<double>, 3> f1;
};

struct MetricsReport {
  ScopeMetrics known;
  ScopeMetrics unknown;
  std::array<double, 3> thresholds = kF1Thresholds;
};

// Metrics over a dataset where only frames selected by keep() count; pred
// labels pass through relabel() first. MoF and F1 pool frames and segments
// over videos, Edit is the mean over videos with at least one kept frame.
template <typename Keep, typename Relabel>
ScopeMetrics scope_metrics(std::span<const EvalVideo> videos, Keep keep, Relabel relabel) {
  ScopeMetrics m;
  std::size_t total = 0, correct = 0, edit_videos = 0;
  double edit_sum = 0.0;
  std::array<F1Counts, 3> counts{};
  std::vector<LabelId> p, g;
  for (const EvalVideo& v : videos) {
    if (v.pred.size() != v.gt.size()) throw Error("prediction and ground truth differ in length");
    p.assign(v.gt.size(), kIgnore);
    g.assign(v.gt.size(), kIgnore);
    std::size_t kept = 0;
    for (std::size_t t = 0; t < v.gt.size(); ++t) {
      if (!keep(v.gt[t])) continue;
      ++kept;
      g[t] = v.gt[t];
      p[t] = relabel(v.pred[t]);
      correct += p[t] == g[t];
    }
    if (kept == 0) continue;
    total += kept;
    const auto ps = masked_segments(p);
    const auto gs = masked_segments(g);
    edit_sum += edit_score(ps, gs);
    ++edit_videos;
    for (std::size_t i = 0; i < kF1Thresholds.size(); ++i) counts[i] += f1_counts(ps, gs, kF1Thresholds[i]);
  }
  if (total == 0) return m;
  m.mof = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  m.edit = edit_sum / static_cast<double>(edit_videos);
  for (std::size_t i = 0; i < counts.size(); ++i) m.f1[i] = f1_from_counts(counts[i]);
  return m;
}

// Known scope hides frames whose ground truth is unknown; the unknown scope
// hides ground-truth known frames and scores clusters through the mapping.
inline MetricsReport masked_report(std::span<const EvalVideo> videos, const std::set<LabelId>& known_ids,
                                   const ClusterMapping& mapping) {
  MetricsReport r;
  auto is_known = [&](LabelId id) { return known_ids.contains(id); };
  r.known = scope_metrics(videos, is_known, [](LabelId id) { return id; });
  r.unknown = scope_metrics(
      videos, [&](LabelId id) { return !is_known(id); },
      [&](LabelId id) { return is_known(id) ? id : mapping.apply(id); });
  return r;
}

inline ingest::Report to_report(const MetricsReport& m) {
  ingest::Report out;
  auto put = [&](const ScopeMetrics& s, const std::string& scope) {
    out["mof." + scope] = s.mof;
    out["edit." + scope] = s.edit;
    out["f1_10." + scope] = s.f1[0];
    out["f1_25." + scope] = s.f1[1];
    out["f1_50." + scope] = s.f1[2];
  };
  put(m.known, "known");
  put(m.unknown, "unknown");
  return out;
}

}  // namespace discoverseg::eval
