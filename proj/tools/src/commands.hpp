#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace ccnet::cli {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::filesystem::path> out;
  bool overwrite = false;
};

enum class Split { train, test, calib };

// Loads the config and applies --seed / --mode.
RunConfig resolve_config(const std::filesystem::path& config_path, const Overrides& flags);
// <output_dir>/<mode>/seed<seed>
std::filesystem::path run_dir(const RunConfig& config);
std::vector<SynthScene> load_split(const RunConfig& config, Split split);
std::uint64_t proposal_seed(const RunConfig& config, Split split);

// Each command returns a process exit code and throws ConfigError on bad input.
// Existing outputs are left untouched unless `overwrite` is set.
int cmd_train(const std::filesystem::path& config_path, const Overrides& flags);
int cmd_calibrate(const std::filesystem::path& config_path, const std::optional<std::filesystem::path>& checkpoint,
                  const std::optional<std::vector<double>>& target_reject, const Overrides& flags);
int cmd_eval(const std::filesystem::path& config_path, const std::optional<std::filesystem::path>& checkpoint,
             const std::optional<std::filesystem::path>& thresholds, const std::optional<std::filesystem::path>& traces,
             const Overrides& flags);
int cmd_report(const std::filesystem::path& runs, const Overrides& flags);

// CSV header of the ablation table; one row per mode follows.
inline constexpr const char* kReportHeader =
    "mode,present,reports,mAP,mean_stages_per_roi,mean_stages_per_negative,neg_reject_rate,pos_reject_rate";

std::string ablation_csv(const std::filesystem::path& runs);

// {"thresholds":[..], ...}; throws ConfigError when the stage count differs.
std::vector<double> read_thresholds(const std::filesystem::path& path, std::size_t stages);

}  // namespace ccnet::cli
