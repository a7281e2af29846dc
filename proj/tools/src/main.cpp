#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "ccnet/error.hpp"
#include "commands.hpp"

namespace {

// CC_NET_LOG: trace, debug, info (default), warn, error, off.
void setup_logging() {
  auto logger = spdlog::stderr_color_mt("ccnet");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  const char* level = std::getenv("CC_NET_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  namespace fs = std::filesystem;
  using namespace ccnet::cli;

  CLI::App app{"Chained cascade detection head: train, calibrate, evaluate, report"};
  app.require_subcommand(1);

  Overrides flags;
  fs::path config;
  std::optional<fs::path> checkpoint, thresholds, traces;
  std::optional<std::vector<double>> target;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<fs::path> out;
  fs::path runs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Override the run seed");
    cmd->add_option("--mode", mode,
                    "single_stage_baseline | conventional_cascade | chained_cascade | chained_cascade_no_feature_chain");
    cmd->add_option("--out", out, "Output path (directory for train, file otherwise)");
    cmd->add_flag("--overwrite", flags.overwrite, "Replace existing outputs");
  };

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint.bin plus train_log.jsonl");
  train->add_option("--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
  add_common(train);

  auto* calibrate = app.add_subcommand("calibrate", "Fit per-stage rejection thresholds on the calibration split");
  calibrate->add_option("--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--checkpoint", checkpoint, "Checkpoint (default: <run dir>/checkpoint.bin)");
  calibrate->add_option("--target", target, "Per-stage negative rejection targets")->delimiter(',');
  add_common(calibrate);

  auto* eval = app.add_subcommand("eval", "Evaluate on the test split; prints the JSON report");
  eval->add_option("--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: <run dir>/checkpoint.bin)");
  eval->add_option("--thresholds", thresholds, "Thresholds JSON from calibrate (default: chain.thresholds)");
  eval->add_option("--traces", traces, "Also write per-RoI traces as JSON lines");
  add_common(eval);

  auto* report = app.add_subcommand("report", "Summarize eval.json files under a directory as an ablation CSV");
  report->add_option("run_dir", runs, "Directory searched for eval.json files")->required();
  add_common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  flags.seed = seed;
  flags.mode = mode;
  flags.out = out;

  try {
    if (*train) return cmd_train(config, flags);
    if (*calibrate) return cmd_calibrate(config, checkpoint, target, flags);
    if (*eval) return cmd_eval(config, checkpoint, thresholds, traces, flags);
    if (*report) return cmd_report(runs, flags);
  } catch (const ccnet::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ccnet::NumericError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
