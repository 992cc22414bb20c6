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

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "discoverseg/eval.hpp"
#include "oracles.hpp"

namespace discoverseg::eval {
namespace {

constexpr LabelId A = 0, B = 1, U1 = 2, U2 = 3;
constexpr LabelId C1 = 10, C2 = 11, C3 = 12;
const std::set<LabelId> kKnown{A, B};

std::vector<Segment> segs(std::initializer_list<std::tuple<Frame, Frame, LabelId>> list) {
  std::vector<Segment> out;
  for (auto [s, e, l] : list) out.push_back({Interval(s, e), l});
  return out;
}

Matrix random_cost(std::mt19937_64& rng, std::size_t n, std::size_t m, bool integer) {
  Matrix c(n, m);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> k(0, 4);
  for (double& v : c.data()) v = integer ? k(rng) : u(rng);
  return c;
}

TEST(Hungarian, HandCases) {
  const Matrix diag = Matrix::from_rows({{0, 5, 5}, {5, 0, 5}, {5, 5, 0}});
  const Assignment a = hungarian(diag);
  EXPECT_EQ(a.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 2}}));
  EXPECT_EQ(a.cost, 0.0);
  const Assignment b = hungarian(Matrix::from_rows({{1, 2}, {2, 1}}));
  EXPECT_EQ(b.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_EQ(b.cost, 2.0);
  EXPECT_TRUE(hungarian(Matrix()).pairs.empty());
  EXPECT_THROW(hungarian(Matrix::from_rows({{1, std::nan("")}})), Error);
}

TEST(Hungarian, MatchesFactorialOracleOnSquareMatrices) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 8);
    const Matrix c = random_cost(rng, n, n, trial % 3 == 0);
    const Assignment a = hungarian(c);
    ASSERT_EQ(a.pairs.size(), n);
    std::set<std::size_t> rows, cols;
    double total = 0.0;
    for (auto [i, j] : a.pairs) {
      rows.insert(i);
      cols.insert(j);
      total += c(i, j);
    }
    EXPECT_EQ(rows.size(), n);
    EXPECT_EQ(cols.size(), n);
    EXPECT_NEAR(total, a.cost, 1e-12);
    EXPECT_NEAR(a.cost, oracle::assignment_cost(c), 1e-9) << "trial " << trial;
  }
}

TEST(Hungarian, MatchesOracleOnRectangularMatrices) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    std::size_t m = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    if (trial % 2) std::swap(n, m);
    const Matrix c = random_cost(rng, n, m, trial % 4 == 0);
    const Assignment a = hungarian(c);
    EXPECT_EQ(a.pairs.size(), std::min(n, m));
    EXPECT_NEAR(a.cost, oracle::assignment_cost(c), 1e-9) << n << "x" << m;
  }
}

TEST(MatchClusters, PerfectAlignmentIsRecovered) {
  const std::vector<EvalVideo> videos{{{A, C2, C2, C1, B}, {A, U1, U1, U2, B}}};
  const ClusterMapping m = match_unknown_clusters(videos, kKnown);
  EXPECT_EQ(m.apply(C2), U1);
  EXPECT_EQ(m.apply(C1), U2);
  EXPECT_TRUE(m.unmatched.empty());
  const MetricsReport r = masked_report(videos, kKnown, m);
  EXPECT_EQ(r.unknown.mof, 100.0);
  EXPECT_EQ(r.known.mof, 100.0);
}

TEST(MatchClusters, SingleClusterTakesMajorityClass) {
  // 10 unknown frames: 6 of U1, 4 of U2, all predicted as one cluster.
  std::vector<LabelId> gt{U1, U1, U1, U1, U1, U1, U2, U2, U2, U2};
  std::vector<LabelId> pred(10, C1);
  const std::vector<EvalVideo> videos{{pred, gt}};
  const ClusterMapping m = match_unknown_clusters(videos, kKnown);
  EXPECT_EQ(m.apply(C1), U1);
  EXPECT_NEAR(*masked_report(videos, kKnown, m).unknown.mof, 60.0, 1e-12);
}

TEST(MatchClusters, SurplusClustersStayUnmatched) {
  const std::vector<EvalVideo> videos{{{C1, C1, C2, C3, C3, C3}, {U1, U1, U1, U1, U1, U1}}};
  const ClusterMapping m = match_unknown_clusters(videos, kKnown);
  EXPECT_EQ(m.apply(C3), U1);
  EXPECT_EQ(m.unmatched, (std::vector<LabelId>{C1, C2}));
  EXPECT_NEAR(*masked_report(videos, kKnown, m).unknown.mof, 50.0, 1e-12);
  EXPECT_NE(m.apply(C1), kIgnore);
  EXPECT_NE(m.apply(C1), m.apply(C2));
}

TEST(MatchClusters, PoolsOverlapsAcrossVideos) {
  // Video 1 alone would map C1->U1; the dataset total favours C1->U2.
  const std::vector<EvalVideo> videos{{{C1, C1}, {U1, U1}}, {{C1, C1, C1}, {U2, U2, U2}}};
  EXPECT_EQ(match_unknown_clusters(videos, kKnown).apply(C1), U2);
}

TEST(MatchClusters, NoUnknownFrames) {
  const std::vector<EvalVideo> videos{{{A, C1}, {A, B}}};
  const ClusterMapping m = match_unknown_clusters(videos, kKnown);
  EXPECT_TRUE(m.no_unknown_frames);
  EXPECT_TRUE(m.pairs.empty());
  const std::vector<EvalVideo> bad{{{A}, {A, B}}};
  EXPECT_THROW(match_unknown_clusters(bad, kKnown), Error);
}

TEST(Mof, CountsAndEmptyMask) {
  const std::vector<LabelId> p{A, B, A, B}, g{A, A, A, A};
  const bool all[] = {true, true, true, true};
  const bool none[] = {false, false, false, false};
  EXPECT_EQ(mof(p, g, all), 50.0);
  EXPECT_EQ(mof(g, g, all), 100.0);
  EXPECT_FALSE(mof(p, g, none).has_value());
  const bool first_two[] = {true, true, false, false};
  EXPECT_EQ(mof(p, g, first_two), 50.0);
}

TEST(Edit, HandCasesAndOracle) {
  EXPECT_EQ(edit_score(segs({{0, 5, A}}), segs({{0, 2, A}, {2, 5, B}})), 50.0);
  EXPECT_EQ(edit_score(segs({{0, 2, A}, {2, 5, B}}), segs({{0, 3, A}, {3, 5, B}})), 100.0);
  EXPECT_EQ(edit_score({}, {}), 100.0);
  EXPECT_EQ(edit_score(segs({{0, 1, A}}), {}), 0.0);

  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<LabelId> a(std::uniform_int_distribution<std::size_t>(0, 10)(rng));
    std::vector<LabelId> b(std::uniform_int_distribution<std::size_t>(0, 10)(rng));
    for (auto& v : a) v = std::uniform_int_distribution<LabelId>(0, 3)(rng);
    for (auto& v : b) v = std::uniform_int_distribution<LabelId>(0, 3)(rng);
    EXPECT_EQ(levenshtein(a, b), oracle::levenshtein(a, b));
  }
}

TEST(F1, ThresholdArithmetic) {
  // pred [0,4) vs gt [0,10): IoU 0.4.
  const auto pred = segs({{0, 4, A}, {4, 10, B}});
  const auto gt = segs({{0, 10, A}});
  EXPECT_EQ(f1_counts(pred, gt, 0.25).tp, 1u);
  EXPECT_EQ(f1_counts(pred, gt, 0.50).tp, 0u);
  EXPECT_EQ(f1_counts(pred, gt, 0.50).fp, 2u);
  EXPECT_EQ(f1_counts(pred, gt, 0.50).fn, 1u);
  EXPECT_EQ(f1_at(pred, gt, 0.50), 0.0);
  EXPECT_NEAR(f1_at(pred, gt, 0.25), 100.0 * 2 * 0.5 * 1.0 / 1.5, 1e-12);
}

TEST(F1, NoDoubleMatching) {
  const auto pred = segs({{0, 5, A}, {5, 10, A}});
  const auto gt = segs({{0, 10, A}});
  const F1Counts c = f1_counts(pred, gt, 0.1);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_THROW(f1_counts(pred, gt, 1.0), Error);
  EXPECT_FALSE(f1_from_counts({}).has_value());
  EXPECT_EQ(f1_from_counts({0, 3, 2}), 0.0);
}

TEST(F1, PerfectAndUpsamplingInvariant) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabelId> g(30), p(30);
    for (auto& v : g) v = std::uniform_int_distribution<LabelId>(0, 2)(rng);
    for (auto& v : p) v = std::uniform_int_distribution<LabelId>(0, 2)(rng);
    const auto gs = segments_from_labels(g), ps = segments_from_labels(p);
    for (double th : kF1Thresholds) EXPECT_EQ(f1_at(gs, gs, th), 100.0);
    EXPECT_EQ(edit_score(gs, gs), 100.0);
    std::vector<LabelId> g3, p3;
    for (std::size_t t = 0; t < 30; ++t)
      for (int r = 0; r < 3; ++r) {
        g3.push_back(g[t]);
        p3.push_back(p[t]);
      }
    const auto gs3 = segments_from_labels(g3), ps3 = segments_from_labels(p3);
    EXPECT_EQ(edit_score(ps, gs), edit_score(ps3, gs3));
    for (double th : kF1Thresholds) EXPECT_EQ(f1_at(ps, gs, th), f1_at(ps3, gs3, th));
  }
}

TEST(MaskedSegments, IgnoreRunsSeparate) {
  const std::vector<LabelId> l{A, A, kIgnore, A, B, kIgnore};
  EXPECT_EQ(masked_segments(l), segs({{0, 2, A}, {3, 4, A}, {4, 5, B}}));
  EXPECT_TRUE(masked_segments(std::vector<LabelId>{}).empty());
}

TEST(MaskedReport, SixFrameCases) {
  const std::vector<LabelId> gt{A, A, U1, U1, B, B};
  {
    const std::vector<EvalVideo> v{{{A, A, C1, C1, B, B}, gt}};
    const auto r = masked_report(v, kKnown, match_unknown_clusters(v, kKnown));
    for (const ScopeMetrics* s : {&r.known, &r.unknown}) {
      EXPECT_EQ(s->mof, 100.0);
      EXPECT_EQ(s->edit, 100.0);
      for (const auto& f : s->f1) EXPECT_EQ(f, 100.0);
    }
  }
  {
    // U1 split over two clusters, one frame each.
    const std::vector<EvalVideo> v{{{A, A, C1, C2, B, B}, gt}};
    const ClusterMapping m = match_unknown_clusters(v, kKnown);
    const auto r = masked_report(v, kKnown, m);
    EXPECT_EQ(r.known.mof, 100.0);
    EXPECT_EQ(r.unknown.mof, 50.0);
    EXPECT_EQ(r.unknown.edit, 50.0);
    // One matched half-segment: IoU 0.5, a TP at every threshold (>=); the
    // unmatched half is a FP. P = 1/2, R = 1.
    for (const auto& f : r.unknown.f1) EXPECT_NEAR(*f, 200.0 / 3.0, 1e-12);
  }
}

TEST(MaskedReport, AllKnownLeavesUnknownScopeAbsent) {
  const std::vector<EvalVideo> v{{{A, A, B}, {A, A, B}}};
  const auto r = masked_report(v, kKnown, match_unknown_clusters(v, kKnown));
  EXPECT_EQ(r.known.mof, 100.0);
  EXPECT_FALSE(r.unknown.mof.has_value());
  EXPECT_FALSE(r.unknown.edit.has_value());
  const auto report = to_report(r);
  EXPECT_EQ(report.size(), 10u);
  for (const char* key : {"mof.known", "edit.known", "f1_10.known", "f1_25.known", "f1_50.known", "mof.unknown",
                          "edit.unknown", "f1_10.unknown", "f1_25.unknown", "f1_50.unknown"})
    EXPECT_TRUE(report.contains(key)) << key;
  EXPECT_EQ(ingest::format_report(report).find("mof.unknown=n/a"), ingest::format_report(report).find("mof.unknown"));
}

std::vector<EvalVideo> random_videos(std::mt19937_64& rng, std::size_t count) {
  std::vector<EvalVideo> out;
  for (std::size_t v = 0; v < count; ++v) {
    EvalVideo ev;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 40)(rng);
    LabelId g = 0, p = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t == 0 || std::bernoulli_distribution(0.2)(rng)) g = std::uniform_int_distribution<LabelId>(0, 4)(rng);
      if (t == 0 || std::bernoulli_distribution(0.25)(rng)) {
        p = std::uniform_int_distribution<LabelId>(0, 5)(rng);
        if (p >= 2) p = 10 + (p - 2);  // clusters 10..13
      }
      ev.gt.push_back(g);
      ev.pred.push_back(p);
    }
    out.push_back(std::move(ev));
  }
  return out;
}

TEST(MaskedReport, InvariantToClusterRelabeling) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    auto videos = random_videos(rng, 4);
    std::vector<LabelId> perm{10, 11, 12, 13};
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permuted = videos;
    for (auto& v : permuted)
      for (auto& p : v.pred)
        if (p >= 10) p = perm[static_cast<std::size_t>(p - 10)];
    const auto a = to_report(masked_report(videos, kKnown, match_unknown_clusters(videos, kKnown)));
    const auto b = to_report(masked_report(permuted, kKnown, match_unknown_clusters(permuted, kKnown)));
    // The Hungarian optimum is unique up to ties in total overlap; compare
    // the matched-frame count, which is invariant, via MoF.
    EXPECT_NEAR(a.at("mof.unknown").value_or(-1), b.at("mof.unknown").value_or(-1), 1e-9);
    EXPECT_EQ(a.at("mof.known"), b.at("mof.known"));
    EXPECT_EQ(a.at("edit.known"), b.at("edit.known"));
  }
}

TEST(MaskedReport, SwappingKnownAndUnknownSwapsScopes) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 50; ++trial) {
    // Predictions here use ground-truth ids directly, so the mapping is the
    // identity on both sides.
    auto videos = random_videos(rng, 3);
    for (auto& v : videos) v.pred = v.gt;
    for (auto& v : videos)
      for (std::size_t t = 0; t < v.pred.size(); t += 3) v.pred[t] = (v.pred[t] + 1) % 5;
    const std::set<LabelId> known{0, 1}, swapped{2, 3, 4};
    ClusterMapping identity_a, identity_b;
    for (LabelId c : {2, 3, 4}) identity_a.pairs[c] = c;
    for (LabelId c : {0, 1}) identity_b.pairs[c] = c;
    const MetricsReport r1 = masked_report(videos, known, identity_a);
    const MetricsReport r2 = masked_report(videos, swapped, identity_b);
    EXPECT_EQ(r1.known.mof, r2.unknown.mof);
    EXPECT_EQ(r1.unknown.mof, r2.known.mof);
    EXPECT_EQ(r1.known.edit, r2.unknown.edit);
    EXPECT_EQ(r1.unknown.f1, r2.known.f1);
  }
}

}  // namespace
}  // namespace discoverseg::eval
