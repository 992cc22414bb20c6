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

// discoverseg: synth | fit | discover | eval | plot
//
// Exit codes: 0 success, 2 input or config error, 3 nothing to discover,
// 4 model/embedding dimension mismatch.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "discoverseg/error.hpp"
#include "discoverseg/ingest.hpp"
#include "discoverseg/pipeline.hpp"
#include "discoverseg/synth.hpp"

namespace {

namespace ds = discoverseg;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("DISCOVERSEG_SEED")) {
    try {
      return ds::ingest::parse_int<std::uint64_t>(env, "DISCOVERSEG_SEED");
    } catch (const ds::Error& e) {
      std::cerr << "warning: ignoring " << e.what() << "\n";
    }
  }
  return ds::uasa::kDefaultSeed;
}

void add_dataset_flags(CLI::App* cmd, ds::pipeline::RunConfig& cfg) {
  cmd->add_option("--manifest", cfg.manifest, "Dataset manifest (tsv)")->required();
  cmd->add_option("--known-config", cfg.known_config, "Known action names, one per line")->required();
  cmd->add_option("--label-map", cfg.label_map, "Label map (default: label_map.txt beside the manifest)");
  cmd->add_option("--jobs", cfg.jobs, "Worker threads (0 = all cores)");
}

void add_ggsm_flags(CLI::App* cmd, ds::pipeline::RunConfig& cfg) {
  cmd->add_option("--alpha", cfg.ggsm.alpha, "Length-balancing strength")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--max-levels", cfg.ggsm.max_levels, "Largest cluster count scored")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--stride", cfg.ggsm.stride, "Frame block size before clustering")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_flag("--timing", cfg.timing, "Print per-stage wall-clock time");
}

ds::ingest::Split parse_split_flag(const std::string& s) { return ds::ingest::parse_split(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action discovery for temporal action segmentation"};
  app.require_subcommand(1);

  ds::pipeline::RunConfig cfg;
  cfg.seed = default_seed();
  std::string split = "test";
  std::string mode = "train";

  std::optional<std::string> synth_config;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", synth_config, "key = value config file (defaults when omitted)");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", cfg.seed, "Overrides the config seed");

  auto* fit = app.add_subcommand("fit", "Estimate unknown classes on the train split");
  add_dataset_flags(fit, cfg);
  add_ggsm_flags(fit, cfg);
  fit->add_option("--model", cfg.model, "Output model file")->required();
  fit->add_option("--k-max", cfg.k_max, "Largest K tried")->capture_default_str()->check(CLI::PositiveNumber);
  fit->add_option("--seed", cfg.seed, "RNG seed (env DISCOVERSEG_SEED sets the default)")->capture_default_str();
  fit->add_flag("--init-from-gmm", cfg.init_from_gmm, "Start k-means from the BIC-selected GMM means");

  auto* discover = app.add_subcommand("discover", "Label videos with known and discovered classes");
  add_dataset_flags(discover, cfg);
  add_ggsm_flags(discover, cfg);
  discover->add_option("--model", cfg.model, "Model file from fit")->required();
  discover->add_option("--out", cfg.out, "Output directory for <video_id>.txt")->required();
  discover->add_option("--mode", mode, "train: labels from ground truth; infer: labels from --predictions")
      ->check(CLI::IsMember({"train", "infer"}))->capture_default_str();
  discover->add_option("--predictions", cfg.predictions, "Frame predictions over known names and UNK (infer mode)");
  discover->add_option("--split", split, "Videos to process")->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  std::string pred_dir;
  auto* evaluate = app.add_subcommand("eval", "Masked metrics with dataset-level cluster matching");
  add_dataset_flags(evaluate, cfg);
  evaluate->add_option("--pred", pred_dir, "Directory of <video_id>.txt predictions")->required();
  evaluate->add_option("--out", cfg.out, "Report file (default <pred>/report.txt)");
  evaluate->add_option("--split", split, "Videos to evaluate")->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  std::string gt_path, pred_path, svg_path;
  std::optional<std::string> plot_known;
  auto* plot = app.add_subcommand("plot", "Render ground truth and prediction timelines as SVG");
  plot->add_option("--gt", gt_path, "Ground-truth label file")->required();
  plot->add_option("--pred", pred_path, "Predicted label file")->required();
  plot->add_option("--out", svg_path, "Output SVG")->required();
  plot->add_option("--known-config", plot_known, "Known action names (pale colors)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    cfg.split = parse_split_flag(split);
    cfg.mode = mode == "infer" ? ds::pipeline::Mode::kInfer : ds::pipeline::Mode::kTrain;
    if (*synth) {
      ds::synth::SynthConfig sc;
      if (synth_config) sc = ds::synth::parse_synth_config(ds::ingest::read_file(*synth_config));
      if (synth->count("--seed")) sc.seed = cfg.seed;
      const auto data = ds::synth::generate_dataset(sc);
      ds::synth::write_dataset(synth_out, data);
      std::cout << "videos=" << data.videos.size() << " known=" << sc.n_known << " unknown=" << sc.n_unknown
                << " out=" << synth_out << "\n";
    } else if (*fit) {
      ds::pipeline::run_fit(cfg, std::cout);
    } else if (*discover) {
      if (cfg.mode == ds::pipeline::Mode::kInfer && cfg.predictions.empty())
        throw ds::Error("--predictions is required in infer mode");
      ds::pipeline::run_discover(cfg, std::cout);
    } else if (*evaluate) {
      cfg.predictions = pred_dir;
      if (cfg.out.empty()) cfg.out = std::filesystem::path(pred_dir) / "report.txt";
      ds::pipeline::run_eval(cfg, std::cout);
    } else if (*plot) {
      std::optional<std::filesystem::path> known;
      if (plot_known) known = *plot_known;
      ds::pipeline::run_plot(gt_path, pred_path, svg_path, known);
    }
  } catch (const ds::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
