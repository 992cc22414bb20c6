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

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "discoverseg/pipeline.hpp"
#include "discoverseg/synth.hpp"

namespace discoverseg::pipeline {
namespace {

struct CliResult {
  int code;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / ("discoverseg_cli_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = std::string(DISCOVERSEG_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, ingest::read_file(log)};
  fs::remove(log);
  return r;
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / ("discoverseg_pipeline_" + std::to_string(::getpid())));
    synth::SynthConfig c;
    c.n_videos = 8;
    c.n_known = 3;
    c.n_unknown = 2;
    c.dim = 6;
    c.frames_per_segment = {10, 14};
    c.segments_per_video = {5, 7};
    c.multi_unknown_frac = 0.0;
    c.test_fraction = 0.25;
    c.class_sep = 20.0;
    c.noise_sigma = 0.5;
    data_ = new synth::SynthDataset(synth::generate_dataset(c));
    synth::write_dataset(*root_ / "data", *data_);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
    delete data_;
  }

  RunConfig config() const {
    RunConfig cfg;
    cfg.manifest = *root_ / "data" / "manifest.tsv";
    cfg.known_config = *root_ / "data" / "known.txt";
    cfg.ggsm.alpha = 0.05;
    cfg.jobs = 2;
    return cfg;
  }

  // Ground truth written as predictions: known names, unknown class j as UNK_{j+1}.
  void write_oracle_predictions(const fs::path& dir) const {
    for (const auto& v : data_->videos) {
      std::string text;
      for (LabelId id : v.gt) {
        if (data_->is_unknown_class(id))
          text += "UNK_" + std::to_string(id - static_cast<LabelId>(data_->known.known_names.size()) + 1) + "\n";
        else
          text += data_->label_map.name(id) + "\n";
      }
      ingest::write_file_atomic(dir / (v.id + ".txt"), text);
    }
  }

  static fs::path* root_;
  static synth::SynthDataset* data_;
};

fs::path* PipelineTest::root_ = nullptr;
synth::SynthDataset* PipelineTest::data_ = nullptr;

TEST_F(PipelineTest, ParallelForRunsEveryIndexAndRethrows) {
  std::vector<int> hit(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hit[i] += 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 100);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw Error("boom");
               }),
               Error);
}

TEST_F(PipelineTest, FitDiscoverEvalInProcess) {
  RunConfig cfg = config();
  cfg.model = *root_ / "model.txt";
  std::ostringstream log;
  const FitResult fit = run_fit(cfg, log);
  EXPECT_EQ(fit.train_videos, 6u);
  EXPECT_GT(fit.unknown_segments, 0u);
  EXPECT_NE(log.str().find("K=" + std::to_string(fit.model.k)), std::string::npos);
  EXPECT_TRUE(fs::exists(cfg.model));

  cfg.out = *root_ / "pred";
  EXPECT_EQ(run_discover(cfg, log), 2u);
  for (const auto& v : data_->videos) EXPECT_EQ(fs::exists(cfg.out / (v.id + ".txt")), v.split == ingest::Split::kTest);

  RunConfig ev = config();
  ev.predictions = cfg.out;
  ev.out = *root_ / "report.txt";
  const EvalResult r = run_eval(ev, log);
  EXPECT_EQ(r.report.size(), 10u);
  EXPECT_EQ(ingest::read_report(ev.out), ingest::parse_report(ingest::format_report(r.report)));
  ASSERT_TRUE(r.metrics.known.mof.has_value());
  ASSERT_TRUE(r.metrics.unknown.mof.has_value());
  EXPECT_GT(*r.metrics.known.mof, 50.0);
}

TEST_F(PipelineTest, OraclePredictionsScoreHundred) {
  const fs::path dir = *root_ / "oracle";
  write_oracle_predictions(dir);
  RunConfig cfg = config();
  cfg.predictions = dir;
  std::ostringstream log;
  const EvalResult r = run_eval(cfg, log);
  for (const auto& [key, value] : r.report) {
    ASSERT_TRUE(value.has_value()) << key;
    EXPECT_EQ(*value, 100.0) << key;
  }
}

TEST_F(PipelineTest, ConstantClusterScoresMajorityShare) {
  const fs::path dir = *root_ / "constant";
  std::size_t unknown_frames = 0;
  std::map<LabelId, std::size_t> per_class;
  for (const auto& v : data_->videos) {
    std::string text;
    for (LabelId id : v.gt) {
      const bool unk = data_->is_unknown_class(id);
      text += (unk ? std::string("UNK_1") : data_->label_map.name(id)) + "\n";
      if (unk && v.split == ingest::Split::kTest) {
        ++unknown_frames;
        ++per_class[id];
      }
    }
    ingest::write_file_atomic(dir / (v.id + ".txt"), text);
  }
  ASSERT_GT(unknown_frames, 0u);
  std::size_t majority = 0;
  for (const auto& [id, n] : per_class) majority = std::max(majority, n);
  RunConfig cfg = config();
  cfg.predictions = dir;
  std::ostringstream log;
  const EvalResult r = run_eval(cfg, log);
  EXPECT_NEAR(*r.metrics.unknown.mof, 100.0 * static_cast<double>(majority) / static_cast<double>(unknown_frames),
              1e-9);
}

TEST_F(PipelineTest, ReadPredictionMapsNames) {
  const fs::path p = *root_ / "one.txt";
  ingest::write_file_atomic(p, "known_00\nUNK\nUNK_2\n");
  const auto ids = read_prediction(p, data_->label_map, data_->known);
  const LabelId base = 5;
  EXPECT_EQ(ids, (std::vector<LabelId>{0, base, base + 2}));
  ingest::write_file_atomic(p, "unknown_00\n");
  EXPECT_THROW(read_prediction(p, data_->label_map, data_->known), Error);
  ingest::write_file_atomic(p, "UNK_0\n");
  EXPECT_THROW(read_prediction(p, data_->label_map, data_->known), Error);
}

TEST_F(PipelineTest, VideoWithoutUnknownKeepsKnownLabels) {
  auto space = std::make_shared<const LabelSpace>(std::vector<std::string>{"a", "b"});
  Matrix emb(20, 2);
  std::vector<LabelId> labels(20, 0);
  for (std::size_t t = 10; t < 20; ++t) {
    labels[t] = 1;
    emb(t, 0) = 5.0;
  }
  uasa::UasaModel model;
  model.k = 1;
  model.centroids = Matrix(1, 2);
  const FrameLabeling in(labels, space);
  const FrameLabeling out = label_video(emb, in, model, ggsm::GgsmConfig{});
  EXPECT_TRUE(std::ranges::equal(out.labels(), in.labels()));
  model.centroids = Matrix(1, 3);
  try {
    label_video(emb, in, model, ggsm::GgsmConfig{});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kModelMismatch);
  }
}

TEST_F(PipelineTest, CliExitCodes) {
  const std::string data = (*root_ / "data").string();
  const std::string common = " --manifest " + data + "/manifest.tsv --known-config " + data + "/known.txt";

  // Bad synth config: 2, naming the field.
  ingest::write_file_atomic(*root_ / "bad.cfg", "n_videos = 3\nbogus_field = 1\n");
  CliResult r = run_cli("synth --config " + (*root_ / "bad.cfg").string() + " --out " + (*root_ / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("bogus_field"), std::string::npos) << r.out;

  // Unknown flag: 2.
  EXPECT_EQ(run_cli("fit --no-such-flag").code, 2);

  // Empty train split: 3.
  ingest::DatasetManifest m = ingest::read_manifest(*root_ / "data" / "manifest.tsv");
  ingest::DatasetManifest test_only;
  for (auto e : m.videos)
    if (e.split == ingest::Split::kTest) test_only.videos.push_back(e);
  ingest::write_manifest(*root_ / "data" / "test_only.tsv", test_only);
  r = run_cli("fit --manifest " + data + "/test_only.tsv --known-config " + data + "/known.txt --model " +
              (*root_ / "m.txt").string());
  EXPECT_EQ(r.code, 3) << r.out;

  // Model of the wrong dimension: 4.
  uasa::UasaModel wrong;
  wrong.k = 1;
  wrong.centroids = Matrix(1, 3);
  wrong.gmm.k = 1;
  wrong.gmm.weights = {1.0};
  wrong.gmm.means = Matrix(1, 3);
  wrong.gmm.variances = Matrix(1, 3, 1.0);
  uasa::write_model(*root_ / "wrong.txt", wrong);
  r = run_cli("discover" + common + " --model " + (*root_ / "wrong.txt").string() + " --out " +
              (*root_ / "wrong_out").string());
  EXPECT_EQ(r.code, 4) << r.out;

  // Missing embedding file: 2, naming the path.
  ingest::DatasetManifest broken = m;
  broken.videos[0].embedding_path = "emb/does_not_exist.emb";
  broken.videos[0].label_path = fs::relative(m.videos[0].label_path, *root_ / "data");
  for (std::size_t i = 1; i < broken.videos.size(); ++i) {
    broken.videos[i].embedding_path = fs::relative(m.videos[i].embedding_path, *root_ / "data");
    broken.videos[i].label_path = fs::relative(m.videos[i].label_path, *root_ / "data");
  }
  ingest::write_manifest(*root_ / "data" / "broken.tsv", broken);
  r = run_cli("fit --manifest " + data + "/broken.tsv --known-config " + data + "/known.txt --model " +
              (*root_ / "m.txt").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("does_not_exist.emb"), std::string::npos) << r.out;

  // Missing prediction: 2.
  fs::create_directories(*root_ / "empty_pred");
  r = run_cli("eval" + common + " --pred " + (*root_ / "empty_pred").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("missing prediction"), std::string::npos) << r.out;

  // Plot length mismatch: 2.
  ingest::write_file_atomic(*root_ / "g.txt", "a\nb\n");
  ingest::write_file_atomic(*root_ / "p.txt", "a\n");
  r = run_cli("plot --gt " + (*root_ / "g.txt").string() + " --pred " + (*root_ / "p.txt").string() + " --out " +
              (*root_ / "p.svg").string());
  EXPECT_EQ(r.code, 2);
}

TEST_F(PipelineTest, CliEndToEndIsDeterministic) {
  const std::string data = (*root_ / "data").string();
  const std::string common = " --manifest " + data + "/manifest.tsv --known-config " + data + "/known.txt --alpha 0.05";
  std::vector<std::string> outputs;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = *root_ / ("run" + std::to_string(run));
    ASSERT_EQ(run_cli("fit" + common + " --model " + (dir / "model.txt").string()).code, 0);
    ASSERT_EQ(run_cli("discover" + common + " --model " + (dir / "model.txt").string() + " --out " +
                      (dir / "pred").string())
                  .code,
              0);
    const CliResult ev = run_cli("eval" + common.substr(0, common.find(" --alpha")) + " --pred " + (dir / "pred").string());
    ASSERT_EQ(ev.code, 0) << ev.out;
    EXPECT_NE(ev.out.find("unknown"), std::string::npos);
    std::string all = ingest::read_file(dir / "model.txt") + ingest::read_file(dir / "pred" / "report.txt");
    for (const auto& v : data_->videos)
      if (v.split == ingest::Split::kTest) all += ingest::read_file(dir / "pred" / (v.id + ".txt"));
    outputs.push_back(all);
  }
  EXPECT_EQ(outputs[0], outputs[1]);
}

TEST_F(PipelineTest, SeedFromEnvironment) {
  const std::string data = (*root_ / "data").string();
  const std::string common = " --manifest " + data + "/manifest.tsv --known-config " + data + "/known.txt";
  ASSERT_EQ(run_cli("fit" + common + " --model " + (*root_ / "s1.txt").string()).code, 0);
  ASSERT_EQ(run_cli("fit" + common + " --seed 7 --model " + (*root_ / "s7.txt").string()).code, 0);
  ASSERT_EQ(
      std::system(("DISCOVERSEG_SEED=7 " + std::string(DISCOVERSEG_CLI) + " fit" + common + " --model " +
                   (*root_ / "e7.txt").string() + " > /dev/null")
                      .c_str()),
      0);
  EXPECT_EQ(uasa::read_model(*root_ / "s1.txt").seed, 42u);
  EXPECT_EQ(ingest::read_file(*root_ / "s7.txt"), ingest::read_file(*root_ / "e7.txt"));
}

}  // namespace
}  // namespace discoverseg::pipeline
