#include "commands.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "ccnet/calibrate.hpp"
#include "ccnet/error.hpp"
#include "ccnet/parameter.hpp"
#include "ccnet/random.hpp"
#include "json.hpp"

namespace ccnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t split_code(Split s) {
  switch (s) {
    case Split::train: return 1;
    case Split::test: return 2;
    case Split::calib: return 3;
  }
  return 0;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::calib: return "calib";
  }
  return "?";
}

std::size_t split_size(const RunConfig& c, Split s) {
  switch (s) {
    case Split::train: return c.data.train_images;
    case Split::test: return c.data.test_images;
    case Split::calib: return c.data.calib_images;
  }
  return 0;
}

// Stable across runs and platforms, unlike std::hash.
std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

bool skip_existing(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !overwrite) {
    spdlog::info("{} exists; pass --overwrite to replace it", path.string());
    return true;
  }
  return false;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Model load_model(const RunConfig& c, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  Model model(c.model, c.seed);
  load_checkpoint(model.parameters(), checkpoint);
  return model;
}

}  // namespace

RunConfig resolve_config(const fs::path& config_path, const Overrides& flags) {
  RunConfig c = load_run_config(config_path);
  if (flags.seed) c.seed = *flags.seed;
  if (flags.mode) c.mode = parse_mode(*flags.mode);
  return c;
}

fs::path run_dir(const RunConfig& c) {
  return fs::path(c.output_dir) / std::string(to_string(c.mode)) / ("seed" + std::to_string(c.seed));
}

std::uint64_t proposal_seed(const RunConfig& c, Split split) { return derive_seed(c.data.seed, 10 + split_code(split)); }

std::vector<SynthScene> load_split(const RunConfig& c, Split split) {
  const std::size_t n = split_size(c, split);
  const std::uint64_t seed = derive_seed(c.data.seed, split_code(split));
  if (c.data.cache_dir.empty()) return synth_dataset(seed, n, c.data.synth);

  // The cache key covers every generator setting so stale caches are never reused.
  std::ostringstream key;
  const auto& s = c.data.synth;
  key << std::setprecision(17) << seed << ' ' << n << ' ' << s.num_classes << ' ' << s.image_size << ' '
      << s.min_objects << ' ' << s.max_objects << ' ' << s.min_object_size << ' ' << s.max_object_size << ' '
      << s.noise_std << ' ' << s.color_jitter << ' ' << s.clutter;
  std::ostringstream name;
  name << split_name(split) << '-' << std::hex << fnv1a(key.str());
  const fs::path dir = fs::path(c.data.cache_dir) / name.str();
  if (fs::exists(dir / "index.json")) {
    spdlog::debug("loading cached {} split from {}", split_name(split), dir.string());
    return load_dataset(dir);
  }
  auto scenes = synth_dataset(seed, n, c.data.synth);
  save_dataset(dir, scenes, seed, c.data.synth);
  spdlog::debug("cached {} split in {}", split_name(split), dir.string());
  return scenes;
}

std::vector<double> read_thresholds(const fs::path& path, std::size_t stages) {
  const auto j = json::parse(read_text(path));
  if (!j.contains("thresholds")) throw ConfigError(path.string() + ": missing 'thresholds'");
  auto r = j.at("thresholds").get<std::vector<double>>();
  if (r.size() != stages) {
    throw ConfigError(path.string() + ": holds " + std::to_string(r.size()) + " thresholds but the model has " +
                      std::to_string(stages) + " stages");
  }
  return r;
}

int cmd_train(const fs::path& config_path, const Overrides& flags) {
  const RunConfig c = resolve_config(config_path, flags);
  const fs::path dir = flags.out ? *flags.out : run_dir(c);
  const fs::path checkpoint = dir / "checkpoint.bin";
  if (skip_existing(checkpoint, flags.overwrite)) return 0;
  fs::create_directories(dir);
  write_text(dir / "config.yaml", serialize_run_config(c));

  const auto scenes = load_split(c, Split::train);
  Model model(c.model, c.seed);
  TrainOptions opt = c.train_options();
  opt.diagnostic_path = dir / "nonfinite_batch.json";
  opt.checkpoint_dir = dir / "checkpoints";

  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  spdlog::info("training {} seed {} for {} steps on {} images", to_string(c.mode), c.seed, opt.steps, scenes.size());
  train(model, scenes, c.loss, c.mode, opt, [&](const LossReport& r) {
    log << r.to_json() << '\n';
    if (r.step % 50 == 0 || r.step + 1 == opt.steps) spdlog::info("step {} loss {:.5f}", r.step, r.total);
    spdlog::debug("{}", r.to_json());
  });
  save_checkpoint(model.parameters(), checkpoint);
  spdlog::info("wrote {}", checkpoint.string());
  return 0;
}

int cmd_calibrate(const fs::path& config_path, const std::optional<fs::path>& checkpoint,
                  const std::optional<std::vector<double>>& target_reject, const Overrides& flags) {
  const RunConfig c = resolve_config(config_path, flags);
  const std::size_t T = c.model.stages.size();
  const std::vector<double> targets = target_reject ? *target_reject : c.target_reject;
  if (targets.size() != T) {
    throw ConfigError("calibrate: " + std::to_string(targets.size()) + " target rates given for a " +
                      std::to_string(T) + "-stage model");
  }
  const fs::path out = flags.out ? *flags.out : run_dir(c) / "thresholds.json";
  if (skip_existing(out, flags.overwrite)) return 0;

  const Model model = load_model(c, checkpoint ? *checkpoint : run_dir(c) / "checkpoint.bin");
  const auto scenes = load_split(c, Split::calib);
  EvalOptions eo = c.eval_options(proposal_seed(c, Split::calib));
  eo.keep_traces = true;
  // Traces are recorded without rejection; the stage limit keeps the
  // single-stage baseline at one stage.
  const EvalReport traced = evaluate(model, scenes, std::vector<double>(T, 0.0), c.mode, eo);
  const std::size_t active = active_stages(c.mode, T);
  std::vector<double> r = calibrate_thresholds(traced.traces, traced.trace_labels,
                                               std::span(targets).first(active));
  r.resize(T, 0.0);

  // Replay on the same split to report the realized per-stage rates.
  const EvalReport replay = evaluate(model, scenes, r, c.mode, c.eval_options(proposal_seed(c, Split::calib)));
  std::vector<double> realized;
  for (const auto& s : replay.stages) realized.push_back(s.neg_reject_rate());

  json j;
  j["mode"] = std::string(to_string(c.mode));
  j["stages"] = T;
  j["target_reject"] = targets;
  j["thresholds"] = r;
  j["realized_reject"] = realized;
  j["calib_images"] = scenes.size();
  j["negatives"] = traced.negatives;
  write_text(out, j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  spdlog::info("wrote {}", out.string());
  return 0;
}

int cmd_eval(const fs::path& config_path, const std::optional<fs::path>& checkpoint,
             const std::optional<fs::path>& thresholds, const std::optional<fs::path>& traces, const Overrides& flags) {
  const RunConfig c = resolve_config(config_path, flags);
  const std::size_t T = c.model.stages.size();
  const fs::path out = flags.out ? *flags.out : run_dir(c) / "eval.json";
  if (skip_existing(out, flags.overwrite)) return 0;
  const std::vector<double> r = thresholds ? read_thresholds(*thresholds, T) : c.thresholds;

  const Model model = load_model(c, checkpoint ? *checkpoint : run_dir(c) / "checkpoint.bin");
  const auto scenes = load_split(c, Split::test);
  EvalOptions eo = c.eval_options(proposal_seed(c, Split::test));
  eo.keep_traces = traces.has_value();
  const EvalReport report = evaluate(model, scenes, r, c.mode, eo);

  const std::string text = report.to_json();
  write_text(out, text + "\n");
  if (traces) {
    std::ostringstream lines;
    for (std::size_t i = 0; i < report.traces.size(); ++i) {
      lines << trace_json_line(report.traces[i], i, report.trace_labels[i]) << '\n';
    }
    write_text(*traces, lines.str());
  }
  std::cout << text << '\n';
  spdlog::info("{} mAP {:.4f}; wrote {}", report.mode, report.map.map, out.string());
  return 0;
}

std::string ablation_csv(const fs::path& runs) {
  if (!fs::is_directory(runs)) throw ConfigError("report: no such directory " + runs.string());
  std::map<std::string, std::vector<EvalReport>> by_mode;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(runs)) {
    if (entry.is_regular_file() && entry.path().filename() == "eval.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    EvalReport r = EvalReport::from_json(read_text(f));
    by_mode[r.mode].push_back(std::move(r));
  }

  std::ostringstream csv;
  csv << kReportHeader << '\n' << std::setprecision(17);
  for (Mode m : all_modes()) {
    const std::string name(to_string(m));
    const auto it = by_mode.find(name);
    if (it == by_mode.end()) {
      csv << name << ",0,0,,,,,\n";
      continue;
    }
    const auto& reps = it->second;
    auto mean = [&](auto field) {
      double s = 0.0;
      for (const auto& r : reps) s += field(r);
      return s / static_cast<double>(reps.size());
    };
    csv << name << ",1," << reps.size() << ',' << mean([](const EvalReport& r) { return r.map.map; }) << ','
        << mean([](const EvalReport& r) { return r.mean_stages_per_roi; }) << ','
        << mean([](const EvalReport& r) { return r.mean_stages_per_negative; }) << ','
        << mean([](const EvalReport& r) { return r.neg_reject_rate; }) << ','
        << mean([](const EvalReport& r) { return r.pos_reject_rate; }) << '\n';
  }
  return csv.str();
}

int cmd_report(const fs::path& runs, const Overrides& flags) {
  const fs::path out = flags.out ? *flags.out : runs / "ablation.csv";
  if (skip_existing(out, flags.overwrite)) return 0;
  const std::string csv = ablation_csv(runs);
  write_text(out, csv);
  std::cout << csv;
  return 0;
}

}  // namespace ccnet::cli
