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
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/matrix.hpp"

// Granularity-guided segmentation: contiguity-constrained complete-linkage
// clustering of frame embeddings, with the hierarchy level chosen by its
// balanced-IoU agreement with known-action spans.
namespace discoverseg::ggsm {

struct GgsmConfig {
  double alpha = 0.001;
  std::size_t max_levels = 100;
  // Frames are averaged in blocks of this size before clustering.
  std::size_t stride = 1;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be a non-negative number");
    if (max_levels < 1) throw Error("max_levels must be at least 1");
    if (stride < 1) throw Error("stride must be at least 1");
  }
};

// One agglomeration step. Extents are in clustering (possibly strided) frames.
struct Merge {
  double height;
  Interval left;
  Interval right;
};

class MergeTree {
 public:
  MergeTree(Frame frame_count, std::size_t stride, std::vector<Merge> merges)
      : frame_count_(frame_count), stride_(stride), merges_(std::move(merges)) {}

  // Original (unstrided) frame count.
  Frame frame_count() const noexcept { return frame_count_; }
  std::size_t stride() const noexcept { return stride_; }
  // Number of clustering units, i.e. the finest level.
  std::size_t leaves() const noexcept { return merges_.size() + 1; }
  std::span<const Merge> merges() const noexcept { return merges_; }

 private:
  Frame frame_count_;
  std::size_t stride_;
  std::vector<Merge> merges_;
};

namespace detail {

// Block means of consecutive frames; the last block may be shorter.
inline Matrix downsample(const Matrix& x, std::size_t stride) {
  if (stride == 1) return x;
  const std::size_t n = (x.rows() + stride - 1) / stride;
  Matrix out(n, x.cols());
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t lo = b * stride;
    const std::size_t hi = std::min(x.rows(), lo + stride);
    auto dst = out.row(b);
    for (std::size_t t = lo; t < hi; ++t) {
      auto src = x.row(t);
      for (std::size_t d = 0; d < x.cols(); ++d) dst[d] += src[d];
    }
    for (double& v : dst) v /= static_cast<double>(hi - lo);
  }
  return out;
}

// Packed strict upper triangle of a symmetric n x n matrix.
class TriangularMatrix {
 public:
  explicit TriangularMatrix(std::size_t n) : n_(n), data_(n * (n - 1) / 2) {}
  double& at(std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return data_[i * (2 * n_ - i - 1) / 2 + (j - i - 1)];
  }

 private:
  std::size_t n_;
  std::vector<double> data_;
};

}  // namespace detail

// Complete-linkage agglomeration where only temporally adjacent clusters may
// merge. Cluster distances follow D(A u B, C) = max(D(A, C), D(B, C)); equal
// distances go to the leftmost pair.
inline MergeTree build_merge_tree(const Matrix& embeddings, std::size_t stride = 1) {
  if (embeddings.rows() == 0) throw Error("empty sequence");
  if (stride < 1) throw Error("stride must be at least 1");
  if (!embeddings.all_finite()) throw Error("non-finite embedding");
  const Matrix x = detail::downsample(embeddings, stride);
  const std::size_t n = x.rows();
  std::vector<Merge> merges;
  if (n == 1) return MergeTree(static_cast<Frame>(embeddings.rows()), stride, std::move(merges));
  merges.reserve(n - 1);

  detail::TriangularMatrix dist(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist.at(i, j) = euclidean_distance(x.row(i), x.row(j));

  // Active clusters are keyed by their first frame and chained left to right.
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> next(n), prev(n), end(n);
  for (std::size_t i = 0; i < n; ++i) {
    next[i] = i + 1 < n ? i + 1 : kNone;
    prev[i] = i == 0 ? kNone : i - 1;
    end[i] = i + 1;
  }

  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t best = kNone;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c != kNone && next[c] != kNone; c = next[c]) {
      const double d = dist.at(c, next[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    const std::size_t a = best;
    const std::size_t b = next[a];
    merges.push_back({best_d, Interval(static_cast<Frame>(a), static_cast<Frame>(end[a])),
                      Interval(static_cast<Frame>(b), static_cast<Frame>(end[b]))});
    for (std::size_t c = 0; c != kNone; c = next[c]) {
      if (c == a || c == b) continue;
      double& dac = dist.at(a, c);
      dac = std::max(dac, dist.at(b, c));
    }
    end[a] = end[b];
    next[a] = next[b];
    if (next[b] != kNone) prev[next[b]] = a;
  }
  return MergeTree(static_cast<Frame>(embeddings.rows()), stride, std::move(merges));
}

// Partition into exactly k intervals (in clustering units), mapped back to
// original frames.
inline Proposal proposal_at_level(const MergeTree& tree, std::size_t k) {
  const std::size_t n = tree.leaves();
  if (k < 1 || k > n)
    throw Error("level " + std::to_string(k) + " outside [1," + std::to_string(n) + "]");
  std::vector<bool> cut(n + 1, true);
  const auto merges = tree.merges();
  for (std::size_t m = 0; m < n - k; ++m) cut[static_cast<std::size_t>(merges[m].right.start())] = false;
  const auto stride = static_cast<Frame>(tree.stride());
  std::vector<Interval> out;
  out.reserve(k);
  std::size_t start = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    if (!cut[i]) continue;
    out.emplace_back(static_cast<Frame>(start) * stride,
                     std::min(tree.frame_count(), static_cast<Frame>(i) * stride));
    start = i;
  }
  return Proposal(std::move(out));
}

// Mean balanced IoU over every proposal x known pair.
inline double score_proposal(const Proposal& proposal, std::span<const Interval> known, double alpha) {
  if (known.empty()) throw Error("no reference segments");
  double sum = 0.0;
  for (const Interval& p : proposal.intervals())
    for (const Interval& g : known) sum += iou_balanced(p, g, alpha);
  return sum / (static_cast<double>(proposal.size()) * static_cast<double>(known.size()));
}

struct Selection {
  Proposal proposal;
  double score;
  std::size_t level;
};

// Best-scoring level among 1..min(leaves, max_levels); ties go to the coarser
// level.
inline Selection select_proposal(const MergeTree& tree, std::span<const Interval> known, const GgsmConfig& config) {
  config.validate();
  if (known.empty()) throw Error("no reference segments");
  const std::size_t top = std::min(tree.leaves(), config.max_levels);
  Selection best{proposal_at_level(tree, 1), -1.0, 1};
  for (std::size_t k = 1; k <= top; ++k) {
    Proposal p = proposal_at_level(tree, k);
    const double s = score_proposal(p, known, config.alpha);
    if (s > best.score) best = {std::move(p), s, k};
  }
  return best;
}

// Level chosen without reference spans: stop just before the largest jump in
// merge height. Used when a video carries no known segments.
inline Selection select_by_height_gap(const MergeTree& tree, const GgsmConfig& config) {
  const std::size_t n = tree.leaves();
  const auto merges = tree.merges();
  const std::size_t top = std::min(n, config.max_levels);
  std::size_t best_k = 1;
  double best_gap = 0.0;
  for (std::size_t k = 2; k <= top; ++k) {
    const std::size_t next = n - k;
    const double below = next == 0 ? 0.0 : merges[next - 1].height;
    const double gap = merges[next].height - below;
    if (gap > best_gap) {
      best_gap = gap;
      best_k = k;
    }
  }
  return {proposal_at_level(tree, best_k), 0.0, best_k};
}

// Most frequent label per interval; ties go to the smallest id.
inline std::vector<Segment> majority_vote(const Proposal& proposal, std::span<const LabelId> labels) {
  if (static_cast<Frame>(labels.size()) != proposal.frame_count())
    throw Error("labeling length does not match proposal");
  std::vector<Segment> out;
  out.reserve(proposal.size());
  std::map<LabelId, std::size_t> counts;
  for (const Interval& iv : proposal.intervals()) {
    counts.clear();
    for (Frame t = iv.start(); t < iv.end(); ++t) ++counts[labels[static_cast<std::size_t>(t)]];
    LabelId best = counts.begin()->first;
    std::size_t best_n = 0;
    for (const auto& [id, c] : counts)
      if (c > best_n) {
        best = id;
        best_n = c;
      }
    out.push_back({iv, best});
  }
  return out;
}

struct Discovery {
  Proposal proposal;
  // One segment per proposal interval, carrying its majority label.
  std::vector<Segment> segments;
  double score;
  std::size_t level;

  std::vector<Interval> unknown_intervals(LabelId unk_id) const {
    std::vector<Interval> out;
    for (const Segment& s : segments)
      if (s.label == unk_id) out.push_back(s.interval);
    return out;
  }
};

// Full segmentation step for one video. Intervals whose majority label is UNK
// are the discovered unknown segments.
inline Discovery discover_unknown_segments(const Matrix& embeddings, const FrameLabeling& frame_labels,
                                           std::span<const Interval> known_intervals, const GgsmConfig& config) {
  config.validate();
  if (frame_labels.size() != embeddings.rows())
    throw Error("labels cover " + std::to_string(frame_labels.size()) + " frames but embeddings have " +
                std::to_string(embeddings.rows()));
  const MergeTree tree = build_merge_tree(embeddings, config.stride);
  Selection sel = known_intervals.empty() ? select_by_height_gap(tree, config)
                                          : select_proposal(tree, known_intervals, config);
  auto segments = majority_vote(sel.proposal, frame_labels.labels());
  return {std::move(sel.proposal), std::move(segments), sel.score, sel.level};
}

// Runs of known labels, used as the reference spans.
inline std::vector<Interval> known_spans(const FrameLabeling& labels) {
  const LabelSpace& space = labels.space();
  return runs_where(labels.labels(), [&](LabelId id) { return space.is_known(id); });
}

}  // namespace discoverseg::ggsm
