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
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "discoverseg/core.hpp"
#include "discoverseg/ingest.hpp"
#include "discoverseg/matrix.hpp"

// Unknown-segment assignment: segment-mean embeddings, GMM/BIC estimation of
// the number of unknown classes, k-means centroids, nearest-centroid labels.
namespace discoverseg::uasa {

inline constexpr std::uint64_t kDefaultSeed = 42;
inline constexpr double kVarianceFloor = 1e-6;

struct SegmentMean {
  std::vector<double> mean;
  std::string video_id;
  Interval source;
};

inline std::vector<SegmentMean> segment_means(const Matrix& embeddings, std::span<const Interval> segments,
                                              const std::string& video_id = {}) {
  std::vector<SegmentMean> out;
  out.reserve(segments.size());
  for (const Interval& iv : segments) {
    if (iv.end() > static_cast<Frame>(embeddings.rows())) throw Error("segment extends past the last frame");
    std::vector<double> mean(embeddings.cols(), 0.0);
    for (Frame t = iv.start(); t < iv.end(); ++t) {
      auto row = embeddings.row(static_cast<std::size_t>(t));
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += row[d];
    }
    for (double& v : mean) v /= static_cast<double>(iv.length());
    out.push_back({std::move(mean), video_id, iv});
  }
  return out;
}

inline Matrix as_matrix(std::span<const SegmentMean> means) {
  if (means.empty()) return {};
  Matrix m(means.size(), means.front().mean.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (means[i].mean.size() != m.cols()) throw Error("segment means differ in dimension");
    std::copy(means[i].mean.begin(), means[i].mean.end(), m.row(i).begin());
  }
  return m;
}

// ---------------------------------------------------------------------------
// k-means

namespace detail {

// k-means++ seeding: first center uniform, the rest drawn with probability
// proportional to squared distance to the nearest chosen center.
inline Matrix kmeanspp_init(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.rows();
  Matrix centers(k, points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(points.row(pick).begin(), points.row(pick).end(), centers.row(c).begin());
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centers.row(c)));
      total += d2[i];
    }
    if (total <= 0.0) {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      continue;
    }
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      u -= d2[i];
      if (u < 0.0 && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }
  return centers;
}

}  // namespace detail

// Index of the nearest row of centers; ties go to the smaller index.
inline std::size_t nearest_centroid(const Matrix& centers, std::span<const double> x) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centers.rows(); ++j) {
    const double d = squared_distance(centers.row(j), x);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  double sse = 0.0;
  // Within-cluster SSE after each assignment step.
  std::vector<double> sse_trace;
};

inline double kmeans_sse(const Matrix& points, const Matrix& centers, std::span<const std::size_t> assignment) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) s += squared_distance(points.row(i), centers.row(assignment[i]));
  return s;
}

inline KMeansResult kmeans_from(const Matrix& points, Matrix centers, std::size_t max_iter = 300) {
  const std::size_t n = points.rows();
  const std::size_t k = centers.rows();
  const std::size_t dim = points.cols();
  KMeansResult r;
  r.assignment.assign(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = nearest_centroid(centers, points.row(i));
      if (j != r.assignment[i]) {
        r.assignment[i] = j;
        changed = true;
      }
    }
    r.sse_trace.push_back(kmeans_sse(points, centers, r.assignment));
    if (!changed) break;

    Matrix sums(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = sums.row(r.assignment[i]);
      auto src = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) dst[d] += src[d];
      ++counts[r.assignment[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) centers(j, d) = sums(j, d) / static_cast<double>(counts[j]);
    }
    // Empty clusters restart at the point worst served by its centroid.
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = squared_distance(points.row(i), centers.row(r.assignment[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      std::copy(points.row(far).begin(), points.row(far).end(), centers.row(j).begin());
      --counts[r.assignment[far]];
      r.assignment[far] = j;
      counts[j] = 1;
    }
  }
  r.sse = kmeans_sse(points, centers, r.assignment);
  r.centroids = std::move(centers);
  return r;
}

inline KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed = kDefaultSeed,
                           std::size_t max_iter = 300) {
  if (k < 1) throw Error("k must be at least 1");
  if (points.rows() < k) throw Error("more clusters than points");
  std::mt19937_64 rng(seed);
  return kmeans_from(points, detail::kmeanspp_init(points, k, rng), max_iter);
}

// ---------------------------------------------------------------------------
// Diagonal-covariance GMM

struct GmmModel {
  std::size_t k = 0;
  std::vector<double> weights;
  Matrix means;
  Matrix variances;
  double loglik = 0.0;
  // Log-likelihood at each EM iteration, last entry equal to loglik.
  std::vector<double> loglik_trace;

  std::size_t dim() const noexcept { return means.cols(); }
};

struct GmmOptions {
  std::size_t max_iter = 200;
  double tol = 1e-6;
  double var_floor = kVarianceFloor;
  // Additional floor as a fraction of the mean per-dimension data variance.
  // Keeps single-point components from collapsing when n is small.
  double rel_var_floor = 1e-3;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Per-component log(weight * density) for one point.
inline void component_log_terms(const GmmModel& g, std::span<const double> x, std::span<double> out) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  for (std::size_t j = 0; j < g.k; ++j) {
    double s = 0.0;
    auto mu = g.means.row(j);
    auto var = g.variances.row(j);
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double diff = x[d] - mu[d];
      s += kLog2Pi + std::log(var[d]) + diff * diff / var[d];
    }
    out[j] = std::log(g.weights[j]) - 0.5 * s;
  }
}

// E-step. Fills responsibilities (n x k) and returns the log-likelihood.
inline double expectation(const GmmModel& g, const Matrix& points, Matrix& resp) {
  std::vector<double> terms(g.k);
  double ll = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    component_log_terms(g, points.row(i), terms);
    const double lse = log_sum_exp(terms);
    ll += lse;
    for (std::size_t j = 0; j < g.k; ++j) resp(i, j) = std::exp(terms[j] - lse);
  }
  return ll;
}

inline void maximization(GmmModel& g, const Matrix& points, const Matrix& resp, double var_floor) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  for (std::size_t j = 0; j < g.k; ++j) {
    double nk = 0.0;
    for (std::size_t i = 0; i < n; ++i) nk += resp(i, j);
    g.weights[j] = nk / static_cast<double>(n);
    // A component that lost every point keeps its parameters at zero weight.
    if (nk <= 0.0) continue;
    auto mu = g.means.row(j);
    std::fill(mu.begin(), mu.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = resp(i, j);
      if (r == 0.0) continue;
      auto x = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) mu[d] += r * x[d];
    }
    for (double& v : mu) v /= nk;
    auto var = g.variances.row(j);
    std::fill(var.begin(), var.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = resp(i, j);
      if (r == 0.0) continue;
      auto x = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = x[d] - mu[d];
        var[d] += r * diff * diff;
      }
    }
    for (double& v : var) v = std::max(v / nk, var_floor);
  }
}

}  // namespace detail

inline double gmm_log_likelihood(const GmmModel& g, const Matrix& points) {
  Matrix resp(points.rows(), g.k);
  return detail::expectation(g, points, resp);
}

// EM from a k-means++ start. Stops once an iteration gains less than tol in
// log-likelihood, or after max_iter iterations.
inline GmmModel fit_gmm(const Matrix& points, std::size_t k, std::uint64_t seed = kDefaultSeed,
                        const GmmOptions& opt = {}) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  if (k < 1) throw Error("k must be at least 1");
  if (n < k) throw Error("more components than points");
  if (!points.all_finite()) throw Error("non-finite points");

  std::mt19937_64 rng(seed);
  GmmModel g;
  g.k = k;
  g.weights.assign(k, 1.0 / static_cast<double>(k));
  g.means = detail::kmeanspp_init(points, k, rng);

  std::vector<double> global_mean(dim, 0.0), global_var(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) global_mean[d] += points(i, d);
  for (double& v : global_mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = points(i, d) - global_mean[d];
      global_var[d] += diff * diff;
    }
  double mean_var = 0.0;
  for (double& v : global_var) {
    v /= static_cast<double>(n);
    mean_var += v / static_cast<double>(dim);
  }
  const double floor = std::max(opt.var_floor, opt.rel_var_floor * mean_var);
  g.variances = Matrix(k, dim);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t d = 0; d < dim; ++d) g.variances(j, d) = std::max(global_var[d], floor);

  Matrix resp(n, k);
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0;; ++it) {
    const double ll = detail::expectation(g, points, resp);
    g.loglik_trace.push_back(ll);
    g.loglik = ll;
    if (it > 0 && ll - prev < opt.tol) break;
    if (it >= opt.max_iter) break;
    detail::maximization(g, points, resp, floor);
    prev = ll;
  }
  return g;
}

// Free parameters: k*D means, k*D variances, k-1 weights.
inline std::size_t gmm_parameter_count(std::size_t k, std::size_t dim) { return 2 * k * dim + (k - 1); }

inline double bic(const GmmModel& model, std::size_t n) {
  if (n == 0) throw Error("BIC needs at least one point");
  const double p = static_cast<double>(gmm_parameter_count(model.k, model.dim()));
  return p * std::log(static_cast<double>(n)) - 2.0 * model.loglik;
}

struct KEstimate {
  std::size_t k;
  GmmModel gmm;
  // BIC for each k tried, starting at k_min.
  std::vector<double> bic_curve;
};

// Fits one GMM per candidate k and keeps the lowest BIC; ties go to smaller k.
// k_max = 0 selects min(20, n - 1).
inline KEstimate estimate_k(const Matrix& points, std::size_t k_min = 1, std::size_t k_max = 0,
                            std::uint64_t seed = kDefaultSeed, const GmmOptions& opt = {}) {
  const std::size_t n = points.rows();
  if (n == 0) throw Error("no points to cluster");
  if (n < 2) return {1, fit_gmm(points, 1, seed, opt), {}};
  if (k_max == 0) k_max = std::min<std::size_t>(20, n - 1);
  k_max = std::min(k_max, n);
  k_min = std::max<std::size_t>(k_min, 1);
  if (k_min > k_max) throw Error("empty K search range");
  KEstimate best{0, {}, {}};
  double best_bic = std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    GmmModel g = fit_gmm(points, k, seed, opt);
    const double b = bic(g, n);
    best.bic_curve.push_back(b);
    if (b < best_bic) {
      best_bic = b;
      best.k = k;
      best.gmm = std::move(g);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// UASA model

struct UasaModel {
  std::size_t k = 0;
  Matrix centroids;
  GmmModel gmm;
  std::uint64_t seed = kDefaultSeed;

  std::size_t dim() const noexcept { return centroids.cols(); }
};

struct UasaOptions {
  std::uint64_t seed = kDefaultSeed;
  std::size_t k_max = 20;
  // Start k-means from the selected GMM's means instead of k-means++.
  bool init_from_gmm = false;
};

inline UasaModel fit_uasa(std::span<const SegmentMean> train_means, const UasaOptions& opt = {}) {
  if (train_means.empty()) throw Error("no training segment means");
  const Matrix points = as_matrix(train_means);
  const std::size_t n = points.rows();
  const std::size_t k_max = n < 2 ? 1 : std::min(opt.k_max, n - 1);
  KEstimate est = estimate_k(points, 1, std::max<std::size_t>(k_max, 1), opt.seed);
  KMeansResult km = opt.init_from_gmm ? kmeans_from(points, est.gmm.means) : kmeans(points, est.k, opt.seed);
  return {est.k, std::move(km.centroids), std::move(est.gmm), opt.seed};
}

// Discovered label id (UNK_{j+1}) of the nearest centroid for each mean.
inline std::vector<LabelId> assign_segments(const UasaModel& model, std::span<const SegmentMean> means,
                                            const LabelSpace& space) {
  if (space.num_discovered() < model.k) throw Error("label space has fewer discovered classes than the model");
  std::vector<LabelId> out;
  out.reserve(means.size());
  for (const SegmentMean& m : means) {
    if (m.mean.size() != model.dim())
      throw Error("segment mean has dimension " + std::to_string(m.mean.size()) + ", model expects " +
                      std::to_string(model.dim()),
                  ErrorKind::kModelMismatch);
    out.push_back(space.discovered_id(nearest_centroid(model.centroids, m.mean)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text serialization, 9 significant digits.

namespace detail {

inline void append_row(std::string& out, std::span<const double> row) {
  char buf[32];
  for (std::size_t i = 0; i < row.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", row[i]);
    if (i) out += ' ';
    out += buf;
  }
  out += '\n';
}

inline std::vector<double> read_row(std::istream& in, std::size_t dim, const char* what) {
  std::vector<double> row(dim);
  for (double& v : row) {
    std::string tok;
    if (!(in >> tok)) throw Error(std::string("truncated model file in ") + what);
    v = ingest::parse_double(tok, what);
  }
  return row;
}

inline void expect_token(std::istream& in, const std::string& want) {
  std::string tok;
  if (!(in >> tok) || tok != want) throw Error("malformed model file: expected '" + want + "'");
}

template <typename T>
T read_value(std::istream& in, const std::string& key) {
  expect_token(in, key);
  std::string tok;
  if (!(in >> tok)) throw Error("malformed model file: missing value for '" + key + "'");
  if constexpr (std::is_floating_point_v<T>)
    return ingest::parse_double(tok, key);
  else
    return ingest::parse_int<T>(tok, key);
}

}  // namespace detail

inline std::string format_model(const UasaModel& m) {
  std::string out = "discoverseg-uasa 1\n";
  out += "k " + std::to_string(m.k) + "\n";
  out += "dim " + std::to_string(m.dim()) + "\n";
  out += "seed " + std::to_string(m.seed) + "\n";
  out += "centroids\n";
  for (std::size_t j = 0; j < m.centroids.rows(); ++j) detail::append_row(out, m.centroids.row(j));
  char buf[32];
  out += "gmm_k " + std::to_string(m.gmm.k) + "\n";
  std::snprintf(buf, sizeof buf, "%.9g", m.gmm.loglik);
  out += std::string("gmm_loglik ") + buf + "\n";
  out += "weights\n";
  detail::append_row(out, m.gmm.weights);
  out += "means\n";
  for (std::size_t j = 0; j < m.gmm.means.rows(); ++j) detail::append_row(out, m.gmm.means.row(j));
  out += "variances\n";
  for (std::size_t j = 0; j < m.gmm.variances.rows(); ++j) detail::append_row(out, m.gmm.variances.row(j));
  return out;
}

inline UasaModel parse_model(const std::string& text) {
  std::istringstream in(text);
  detail::expect_token(in, "discoverseg-uasa");
  detail::expect_token(in, "1");
  UasaModel m;
  m.k = detail::read_value<std::size_t>(in, "k");
  const auto dim = detail::read_value<std::size_t>(in, "dim");
  m.seed = detail::read_value<std::uint64_t>(in, "seed");
  if (m.k < 1 || dim < 1) throw Error("model must have k >= 1 and dim >= 1");
  detail::expect_token(in, "centroids");
  m.centroids = Matrix(m.k, dim);
  for (std::size_t j = 0; j < m.k; ++j) {
    auto row = detail::read_row(in, dim, "centroids");
    std::copy(row.begin(), row.end(), m.centroids.row(j).begin());
  }
  m.gmm.k = detail::read_value<std::size_t>(in, "gmm_k");
  m.gmm.loglik = detail::read_value<double>(in, "gmm_loglik");
  detail::expect_token(in, "weights");
  m.gmm.weights = detail::read_row(in, m.gmm.k, "weights");
  detail::expect_token(in, "means");
  m.gmm.means = Matrix(m.gmm.k, dim);
  for (std::size_t j = 0; j < m.gmm.k; ++j) {
    auto row = detail::read_row(in, dim, "means");
    std::copy(row.begin(), row.end(), m.gmm.means.row(j).begin());
  }
  detail::expect_token(in, "variances");
  m.gmm.variances = Matrix(m.gmm.k, dim);
  for (std::size_t j = 0; j < m.gmm.k; ++j) {
    auto row = detail::read_row(in, dim, "variances");
    std::copy(row.begin(), row.end(), m.gmm.variances.row(j).begin());
  }
  if (!m.centroids.all_finite()) throw Error("non-finite centroid in model file");
  return m;
}

inline void write_model(const std::filesystem::path& path, const UasaModel& m) {
  ingest::write_file_atomic(path, format_model(m));
}

inline UasaModel read_model(const std::filesystem::path& path) { return parse_model(ingest::read_file(path)); }

}  // namespace discoverseg::uasa
