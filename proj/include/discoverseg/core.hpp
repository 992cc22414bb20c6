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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "discoverseg/error.hpp"

namespace discoverseg {

using Frame = std::int64_t;
using LabelId = std::int32_t;

// Half-open frame range [start, end). Empty intervals cannot be built.
class Interval {
 public:
  Interval(Frame start, Frame end) : start_(start), end_(end) {
    if (start < 0 || start >= end)
      throw Error("invalid interval [" + std::to_string(start) + "," + std::to_string(end) + ")");
  }

  Frame start() const noexcept { return start_; }
  Frame end() const noexcept { return end_; }
  Frame length() const noexcept { return end_ - start_; }

  friend bool operator==(const Interval&, const Interval&) = default;

 private:
  Frame start_;
  Frame end_;
};

// Known classes take ids [0, |known|), UNK is |known|, and the discovered
// UNK_1..UNK_K classes follow it.
class LabelSpace {
 public:
  static constexpr const char* kUnkName = "UNK";

  explicit LabelSpace(std::vector<std::string> known, std::size_t num_discovered = 0)
      : known_(std::move(known)), num_discovered_(num_discovered) {
    for (std::size_t i = 0; i < size(); ++i) {
      const std::string n = name(static_cast<LabelId>(i));
      if (n.empty()) throw Error("empty class name");
      if (!index_.emplace(n, static_cast<LabelId>(i)).second)
        throw Error("duplicate class name '" + n + "'");
    }
  }

  std::size_t num_known() const noexcept { return known_.size(); }
  std::size_t num_discovered() const noexcept { return num_discovered_; }
  std::size_t size() const noexcept { return known_.size() + 1 + num_discovered_; }

  LabelId unk_id() const noexcept { return static_cast<LabelId>(known_.size()); }
  // j is zero-based; the resulting class is named UNK_{j+1}.
  LabelId discovered_id(std::size_t j) const {
    if (j >= num_discovered_) throw Error("discovered class index out of range");
    return unk_id() + 1 + static_cast<LabelId>(j);
  }

  bool valid(LabelId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < size(); }
  bool is_known(LabelId id) const noexcept { return id >= 0 && id < unk_id(); }

  std::string name(LabelId id) const {
    if (!valid(id)) throw Error("label id " + std::to_string(id) + " outside label space");
    if (is_known(id)) return known_[static_cast<std::size_t>(id)];
    if (id == unk_id()) return kUnkName;
    return std::string(kUnkName) + "_" + std::to_string(id - unk_id());
  }

  std::optional<LabelId> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::string>& known_names() const noexcept { return known_; }

  LabelSpace with_discovered(std::size_t k) const { return LabelSpace(known_, k); }

  friend bool operator==(const LabelSpace& a, const LabelSpace& b) {
    return a.known_ == b.known_ && a.num_discovered_ == b.num_discovered_;
  }

 private:
  std::vector<std::string> known_;
  std::size_t num_discovered_;
  std::unordered_map<std::string, LabelId> index_;
};

// Per-frame labels tied to the label space they are drawn from.
class FrameLabeling {
 public:
  FrameLabeling(std::vector<LabelId> labels, std::shared_ptr<const LabelSpace> space)
      : labels_(std::move(labels)), space_(std::move(space)) {
    if (!space_) throw Error("labeling without label space");
    for (LabelId id : labels_)
      if (!space_->valid(id)) throw Error("label id " + std::to_string(id) + " outside label space");
  }

  std::span<const LabelId> labels() const noexcept { return labels_; }
  const LabelSpace& space() const noexcept { return *space_; }
  const std::shared_ptr<const LabelSpace>& space_ptr() const noexcept { return space_; }
  std::size_t size() const noexcept { return labels_.size(); }
  LabelId operator[](std::size_t t) const { return labels_[t]; }

 private:
  std::vector<LabelId> labels_;
  std::shared_ptr<const LabelSpace> space_;
};

struct Segment {
  Interval interval;
  LabelId label;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Sorted, gap-free, non-overlapping intervals covering [0, T).
class Proposal {
 public:
  explicit Proposal(std::vector<Interval> intervals) : intervals_(std::move(intervals)) {
    if (intervals_.empty()) throw Error("invalid partition: no intervals");
    Frame expect = 0;
    for (const Interval& iv : intervals_) {
      if (iv.start() != expect) throw Error("invalid partition");
      expect = iv.end();
    }
  }

  std::span<const Interval> intervals() const noexcept { return intervals_; }
  std::size_t size() const noexcept { return intervals_.size(); }
  Frame frame_count() const noexcept { return intervals_.back().end(); }
  const Interval& operator[](std::size_t i) const { return intervals_[i]; }

  friend bool operator==(const Proposal&, const Proposal&) = default;

 private:
  std::vector<Interval> intervals_;
};

// Maximal runs of equal labels, in temporal order.
inline std::vector<Segment> segments_from_labels(std::span<const LabelId> labels) {
  if (labels.empty()) throw Error("empty sequence");
  std::vector<Segment> out;
  Frame start = 0;
  const Frame n = static_cast<Frame>(labels.size());
  for (Frame t = 1; t <= n; ++t) {
    if (t == n || labels[t] != labels[start]) {
      out.push_back({Interval(start, t), labels[start]});
      start = t;
    }
  }
  return out;
}

inline std::vector<Segment> segments_from_labels(const FrameLabeling& labeling) {
  return segments_from_labels(labeling.labels());
}

inline std::vector<LabelId> labels_from_segments(std::span<const Segment> segments, Frame frame_count) {
  std::vector<LabelId> out;
  out.reserve(static_cast<std::size_t>(std::max<Frame>(frame_count, 0)));
  Frame expect = 0;
  for (const Segment& s : segments) {
    if (s.interval.start() != expect) throw Error("invalid partition");
    out.insert(out.end(), static_cast<std::size_t>(s.interval.length()), s.label);
    expect = s.interval.end();
  }
  if (expect != frame_count || frame_count == 0) throw Error("invalid partition");
  return out;
}

inline FrameLabeling labels_from_segments(std::span<const Segment> segments, Frame frame_count,
                                          std::shared_ptr<const LabelSpace> space) {
  return FrameLabeling(labels_from_segments(segments, frame_count), std::move(space));
}

// Overlap divided by the span of the hull of both intervals.
inline double iou_unbalanced(const Interval& a, const Interval& b) {
  const Frame overlap = std::min(a.end(), b.end()) - std::max(a.start(), b.start());
  if (overlap <= 0) return 0.0;
  const Frame hull = std::max(a.end(), b.end()) - std::min(a.start(), b.start());
  return static_cast<double>(overlap) / static_cast<double>(hull);
}

// Unbalanced IoU damped by exp(-alpha * |len(a) - len(b)|).
inline double iou_balanced(const Interval& a, const Interval& b, double alpha) {
  if (!(alpha >= 0.0)) throw Error("alpha must be non-negative");
  const double iou = iou_unbalanced(a, b);
  if (iou == 0.0) return 0.0;
  const auto diff = static_cast<double>(a.length() > b.length() ? a.length() - b.length()
                                                                : b.length() - a.length());
  return iou * std::exp(-alpha * diff);
}

// Spans of maximal runs whose label satisfies pred.
template <typename Pred>
std::vector<Interval> runs_where(std::span<const LabelId> labels, Pred pred) {
  std::vector<Interval> out;
  if (labels.empty()) return out;
  for (const Segment& s : segments_from_labels(labels))
    if (pred(s.label)) out.push_back(s.interval);
  return out;
}

}  // namespace discoverseg
