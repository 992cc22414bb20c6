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
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/matrix.hpp"

// Training losses as plain functions returning value and analytic gradient.
namespace discoverseg::losses {

struct LossResult {
  double value = 0.0;
  Matrix grad;
};

struct ContrastiveConfig {
  double tau = 0.4;
  // Std of the positive-offset Gaussian, in frames.
  double sigma_pos = 5.0;
  // Half-width of the positive window in multiples of sigma_pos.
  double trunc = 3.0;
  std::size_t n_neg = 32;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(tau > 0.0)) throw Error("tau must be positive");
    if (!(sigma_pos > 0.0)) throw Error("sigma_pos must be positive");
    if (!(trunc > 0.0)) throw Error("trunc must be positive");
    if (n_neg < 1) throw Error("n_neg must be at least 1");
  }
};

struct ContrastiveResult : LossResult {
  std::size_t anchors = 0;
  // Segments shorter than two frames contribute no anchors.
  std::size_t skipped_segments = 0;
};

// One anchor's positive and negative frame indices.
struct ContrastiveSample {
  std::size_t anchor;
  std::size_t positive;
  std::vector<std::size_t> negatives;
};

// Positives come from a discretised Gaussian over offsets inside the anchor's
// segment and window; negatives are uniform over frames of the video outside
// the window, with replacement.
inline std::vector<ContrastiveSample> sample_contrastive_pairs(std::size_t frame_count,
                                                               std::span<const Interval> unknown_segments,
                                                               const ContrastiveConfig& config,
                                                               std::size_t* skipped = nullptr) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto half = static_cast<Frame>(std::floor(config.trunc * config.sigma_pos));
  const auto T = static_cast<Frame>(frame_count);
  std::vector<ContrastiveSample> out;
  std::size_t skip = 0;
  for (const Interval& seg : unknown_segments) {
    if (seg.end() > T) throw Error("unknown segment extends past the last frame");
    if (seg.length() < 2) {
      ++skip;
      continue;
    }
    for (Frame t = seg.start(); t < seg.end(); ++t) {
      const Frame lo = std::max(seg.start(), t - half);
      const Frame hi = std::min(seg.end() - 1, t + half);
      std::vector<Frame> offsets;
      std::vector<double> weights;
      for (Frame f = lo; f <= hi; ++f) {
        if (f == t) continue;
        const double o = static_cast<double>(f - t) / config.sigma_pos;
        offsets.push_back(f);
        weights.push_back(std::exp(-0.5 * o * o));
      }
      if (offsets.empty())
        throw Error("no positive frame within the window of anchor " + std::to_string(t));
      std::discrete_distribution<std::size_t> pos_dist(weights.begin(), weights.end());
      const Frame pos = offsets[pos_dist(rng)];

      const Frame win_lo = std::max<Frame>(0, t - half);
      const Frame win_hi = std::min(T - 1, t + half);
      const Frame outside = T - (win_hi - win_lo + 1);
      if (outside <= 0) throw Error("no negative frame outside the window of anchor " + std::to_string(t));
      std::uniform_int_distribution<Frame> neg_dist(0, outside - 1);
      ContrastiveSample s{static_cast<std::size_t>(t), static_cast<std::size_t>(pos), {}};
      s.negatives.reserve(config.n_neg);
      for (std::size_t i = 0; i < config.n_neg; ++i) {
        Frame r = neg_dist(rng);
        if (r >= win_lo) r += win_hi - win_lo + 1;
        s.negatives.push_back(static_cast<std::size_t>(r));
      }
      out.push_back(std::move(s));
    }
  }
  if (skipped) *skipped = skip;
  return out;
}

namespace detail {

// Adds w * d sim(a, b) / d a to grad_a, where sim is cosine similarity.
inline void add_cosine_grad(std::span<const double> a, std::span<const double> b, double norm_a, double norm_b,
                            double sim, double w, std::span<double> grad_a) {
  const double inv_ab = 1.0 / (norm_a * norm_b);
  const double inv_aa = sim / (norm_a * norm_a);
  for (std::size_t d = 0; d < a.size(); ++d) grad_a[d] += w * (b[d] * inv_ab - a[d] * inv_aa);
}

}  // namespace detail

// InfoNCE over cosine similarities, averaged over anchors in unknown segments.
inline ContrastiveResult contrastive_loss(const Matrix& embeddings, std::span<const Interval> unknown_segments,
                                          const ContrastiveConfig& config = {}) {
  const std::size_t T = embeddings.rows();
  const std::size_t D = embeddings.cols();
  std::vector<double> norms(T);
  for (std::size_t t = 0; t < T; ++t) {
    double sq = 0.0;
    for (double v : embeddings.row(t)) sq += v * v;
    norms[t] = std::sqrt(sq);
    if (!(norms[t] > 0.0) || !std::isfinite(norms[t])) throw Error("degenerate embedding");
  }
  ContrastiveResult res;
  const auto samples = sample_contrastive_pairs(T, unknown_segments, config, &res.skipped_segments);
  res.grad = Matrix(T, D);
  res.anchors = samples.size();
  if (samples.empty()) return res;

  const double inv_tau = 1.0 / config.tau;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  auto cos = [&](std::size_t a, std::size_t b) {
    double dot = 0.0;
    auto ra = embeddings.row(a);
    auto rb = embeddings.row(b);
    for (std::size_t d = 0; d < D; ++d) dot += ra[d] * rb[d];
    return dot / (norms[a] * norms[b]);
  };

  std::vector<std::size_t> others;
  std::vector<double> sims, logits;
  for (const ContrastiveSample& s : samples) {
    // Denominator set: the positive followed by the negatives.
    others.assign(1, s.positive);
    others.insert(others.end(), s.negatives.begin(), s.negatives.end());
    sims.resize(others.size());
    logits.resize(others.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < others.size(); ++i) {
      sims[i] = cos(s.anchor, others[i]);
      logits[i] = sims[i] * inv_tau;
      m = std::max(m, logits[i]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    const double lse = m + std::log(z);
    res.value += (lse - logits[0]) * inv_n;

    // d/d sim_i = (softmax_i - [i == 0]) / tau, scaled by 1/anchors.
    for (std::size_t i = 0; i < others.size(); ++i) {
      const double w = (std::exp(logits[i] - lse) - (i == 0 ? 1.0 : 0.0)) * inv_tau * inv_n;
      if (w == 0.0) continue;
      const std::size_t a = s.anchor;
      const std::size_t b = others[i];
      detail::add_cosine_grad(embeddings.row(a), embeddings.row(b), norms[a], norms[b], sims[i], w, res.grad.row(a));
      detail::add_cosine_grad(embeddings.row(b), embeddings.row(a), norms[b], norms[a], sims[i], w, res.grad.row(b));
    }
  }
  return res;
}

// Mean softmax cross-entropy over frames.
inline LossResult cross_entropy(const Matrix& logits, std::span<const LabelId> targets) {
  const std::size_t T = logits.rows();
  const std::size_t C = logits.cols();
  if (targets.size() != T) throw Error("targets and logits differ in length");
  if (T == 0) throw Error("empty sequence");
  LossResult r{0.0, Matrix(T, C)};
  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    const LabelId y = targets[t];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw Error("target id " + std::to_string(y) + " out of range");
    auto row = logits.row(t);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const double lse = m + std::log(z);
    r.value += (lse - row[static_cast<std::size_t>(y)]) * inv_t;
    auto g = r.grad.row(t);
    for (std::size_t c = 0; c < C; ++c) g[c] = std::exp(row[c] - lse) * inv_t;
    g[static_cast<std::size_t>(y)] -= inv_t;
  }
  return r;
}

// Temporal smoothing term: mean over consecutive-frame pairs and classes of
// min(clip, (lp[t] - lp[t-1])^2). Clipped cells carry no gradient.
inline LossResult truncated_mse(const Matrix& log_probs, double clip = 16.0) {
  const std::size_t T = log_probs.rows();
  const std::size_t C = log_probs.cols();
  if (T < 2) throw Error("truncated MSE needs at least two frames");
  if (!(clip > 0.0)) throw Error("clip must be positive");
  LossResult r{0.0, Matrix(T, C)};
  const double inv_n = 1.0 / (static_cast<double>(T - 1) * static_cast<double>(C));
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double delta = log_probs(t, c) - log_probs(t - 1, c);
      const double sq = delta * delta;
      if (sq >= clip) {
        r.value += clip * inv_n;
        continue;
      }
      r.value += sq * inv_n;
      r.grad(t, c) += 2.0 * delta * inv_n;
      r.grad(t - 1, c) -= 2.0 * delta * inv_n;
    }
  }
  return r;
}

inline constexpr double kDefaultLambda = 0.1;

inline double combined_loss(double backbone_value, double contrastive_value, double lambda = kDefaultLambda) {
  return backbone_value + lambda * contrastive_value;
}

}  // namespace discoverseg::losses
