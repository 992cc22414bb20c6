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
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/error.hpp"

// SVG timelines: one horizontal bar per labeling, one rectangle per segment.
namespace discoverseg::plot {

struct TimelineRow {
  std::string title;
  std::vector<std::string> labels;
};

struct TimelineStyle {
  double bar_width = 1000.0;
  double bar_height = 24.0;
  double row_gap = 14.0;
  double left_margin = 90.0;
  double top_margin = 10.0;
};

inline constexpr const char* kUnkColor = "#9e9e9e";

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// HSL (h in turns, s and l in [0,1]) to "#rrggbb".
inline std::string hsl_hex(double h, double s, double l) {
  auto channel = [&](double n) {
    const double k = std::fmod(n + h * 12.0, 12.0);
    const double a = s * std::min(l, 1.0 - l);
    const double v = l - a * std::max(-1.0, std::min({k - 3.0, 9.0 - k, 1.0}));
    return static_cast<int>(std::lround(v * 255.0));
  };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", channel(0), channel(8), channel(4));
  return buf;
}

// Label ids are positions in the sorted set of names over all rows. Known
// classes get pale colors, other classes saturated ones, UNK gray.
inline std::string render_timeline(const std::vector<TimelineRow>& rows,
                                   const std::function<bool(const std::string&)>& is_known,
                                   const TimelineStyle& style = {}) {
  if (rows.empty()) throw Error("nothing to plot");
  const std::size_t frames = rows.front().labels.size();
  if (frames == 0) throw Error("empty sequence");
  std::set<std::string> names;
  for (const TimelineRow& r : rows) {
    if (r.labels.size() != frames) throw Error("labelings differ in length");
    names.insert(r.labels.begin(), r.labels.end());
  }
  std::vector<std::string> ordered(names.begin(), names.end());
  auto color = [&](const std::string& name) -> std::string {
    if (name == LabelSpace::kUnkName) return kUnkColor;
    const auto id = static_cast<double>(std::lower_bound(ordered.begin(), ordered.end(), name) - ordered.begin());
    const double hue = std::fmod(id * 0.618033988749895, 1.0);
    return is_known(name) ? hsl_hex(hue, 0.30, 0.78) : hsl_hex(hue, 0.85, 0.45);
  };

  const double height = style.top_margin * 2 + static_cast<double>(rows.size()) * (style.bar_height + style.row_gap);
  char buf[1024];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                style.left_margin + style.bar_width + 10.0, height);
  out += buf;
  const double px_per_frame = style.bar_width / static_cast<double>(frames);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double y = style.top_margin + static_cast<double>(r) * (style.bar_height + style.row_gap);
    std::snprintf(buf, sizeof buf, "<text x=\"4\" y=\"%.3f\">", y + style.bar_height * 0.7);
    out += buf;
    out += xml_escape(rows[r].title);
    out += "</text>\n";
    std::vector<LabelId> ids(frames);
    for (std::size_t t = 0; t < frames; ++t)
      ids[t] = static_cast<LabelId>(std::lower_bound(ordered.begin(), ordered.end(), rows[r].labels[t]) - ordered.begin());
    for (const Segment& s : segments_from_labels(ids)) {
      const std::string& name = ordered[static_cast<std::size_t>(s.label)];
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"%s\"><title>%s [%lld,%lld)</title></rect>\n",
                    style.left_margin + static_cast<double>(s.interval.start()) * px_per_frame, y,
                    static_cast<double>(s.interval.length()) * px_per_frame, style.bar_height, color(name).c_str(),
                    xml_escape(name).c_str(), static_cast<long long>(s.interval.start()), static_cast<long long>(s.interval.end()));
      out += buf;
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace discoverseg::plot
