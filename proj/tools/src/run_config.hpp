#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccnet/evaluate.hpp"
#include "ccnet/model.hpp"
#include "ccnet/objective.hpp"
#include "ccnet/synth.hpp"
#include "ccnet/train.hpp"

namespace ccnet::cli {

struct DataConfig {
  SynthConfig synth;
  std::uint64_t seed = 2024;  // fixed benchmark; the run seed varies the model
  std::size_t train_images = 500;
  std::size_t test_images = 200;
  std::size_t calib_images = 100;
  std::size_t proposals_per_image = 64;
  double jitter = 0.25;
  double neg_fraction = 0.75;
  std::string cache_dir;  // empty: regenerate every time

  friend bool operator==(const DataConfig&, const DataConfig&);
};

struct RunConfig {
  std::uint64_t seed = 1;
  Mode mode = Mode::chained_cascade;
  std::string output_dir = "runs/default";
  ModelConfig model;  // stages, backbone, C1, K (mirrors data.num_classes)
  std::vector<double> thresholds;  // inference r_t, T entries
  LossConfig loss;
  DataConfig data;
  TrainOptions optimizer;  // seed, jitter and neg_fraction come from the fields above
  std::vector<double> target_reject;  // per-stage calibration targets

  static RunConfig defaults();
  // Throws ConfigError naming the offending field (and line when parsed).
  void validate() const;

  EvalOptions eval_options(std::uint64_t proposal_seed) const;
  TrainOptions train_options() const;

  friend bool operator==(const RunConfig&, const RunConfig&);
};

// `source` names the text in error messages.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& config);

}  // namespace ccnet::cli
