#include "run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ccnet/error.hpp"

namespace ccnet::cli {

namespace {

constexpr double kDefaultTrainThreshold = 0.99;
constexpr double kDefaultTargetReject = 0.3;

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& message) const {
    const YAML::Mark m = node.Mark();
    std::ostringstream out;
    out << source_;
    if (!m.is_null()) out << ':' << (m.line + 1) << ':' << (m.column + 1);
    out << ": " << message;
    throw ConfigError(out.str());
  }

  void require_map(const YAML::Node& node, const std::string& path) const {
    if (!node.IsMap()) fail(node, path + " must be a mapping");
  }

  void check_keys(const YAML::Node& node, const std::string& path, std::initializer_list<const char*> allowed) const {
    require_map(node, path.empty() ? "the document" : path);
    std::set<std::string> seen;
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
      const std::string full = path.empty() ? key : path + "." + key;
      if (!ok) fail(kv.first, "unknown key '" + full + "'");
      if (!seen.insert(key).second) fail(kv.first, "duplicate key '" + full + "'");
    }
  }

  template <typename T>
  void get(const YAML::Node& parent, const char* key, const std::string& path, T& out) const {
    const YAML::Node node = parent[key];
    if (!node) return;
    const std::string full = path.empty() ? key : path + "." + key;
    if (!node.IsScalar()) fail(node, full + " must be a scalar");
    if constexpr (std::is_unsigned_v<T>) {
      if (!node.Scalar().empty() && node.Scalar().front() == '-') fail(node, full + " must be nonnegative");
    }
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, full + ": cannot parse '" + node.Scalar() + "'");
    }
  }

  template <typename T>
  bool get_list(const YAML::Node& parent, const char* key, const std::string& path, std::vector<T>& out) const {
    const YAML::Node node = parent[key];
    if (!node) return false;
    const std::string full = path.empty() ? key : path + "." + key;
    if (!node.IsSequence()) fail(node, full + " must be a list");
    std::vector<T> values;
    for (std::size_t i = 0; i < node.size(); ++i) {
      T v{};
      const YAML::Node item = node[i];
      if (!item.IsScalar()) fail(item, full + "[" + std::to_string(i) + "] must be a scalar");
      try {
        v = item.as<T>();
      } catch (const YAML::Exception&) {
        fail(item, full + "[" + std::to_string(i) + "]: cannot parse '" + item.Scalar() + "'");
      }
      values.push_back(v);
    }
    out = std::move(values);
    return true;
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
};

template <typename T>
void check_length(const std::vector<T>& v, std::size_t n, const std::string& field) {
  if (v.size() != n) {
    throw ConfigError(field + " needs " + std::to_string(n) + " entries (one per stage), got " +
                      std::to_string(v.size()));
  }
}

}  // namespace

bool operator==(const DataConfig&, const DataConfig&) = default;
bool operator==(const RunConfig&, const RunConfig&) = default;

TrainOptions RunConfig::train_options() const {
  TrainOptions o = optimizer;
  o.seed = seed;
  o.jitter = data.jitter;
  o.neg_fraction = data.neg_fraction;
  return o;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  const std::size_t T = c.model.stages.size();
  c.data.synth.image_size = 96;
  c.data.synth.min_object_size = 16.0;
  c.data.synth.max_object_size = 40.0;
  c.model.num_classes = c.data.synth.num_classes;
  c.thresholds.assign(T, 0.0);
  c.loss = LossConfig::defaults(T, c.model.num_classes, kDefaultTrainThreshold);
  c.target_reject.assign(T, kDefaultTargetReject);
  return c;
}

void RunConfig::validate() const {
  if (model.stages.empty()) throw ConfigError("stages must list at least one stage");
  const std::size_t T = model.stages.size();
  model.validate();
  data.synth.validate();
  if (model.num_classes != data.synth.num_classes) throw ConfigError("model and data class counts differ");
  check_length(thresholds, T, "chain.thresholds");
  for (double r : thresholds) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("chain.thresholds entries must lie in [0,1]");
  }
  check_length(loss.lambda, T, "loss.lambda");
  if (loss.train_thresholds.size() + 1 != T) {
    throw ConfigError("loss.train_thresholds needs " + std::to_string(T - 1) + " entries (one per stage but the last)");
  }
  loss.validate();
  optimizer.validate();
  check_length(target_reject, T, "calibration.target_reject");
  for (double r : target_reject) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("calibration.target_reject entries must lie in [0,1]");
  }
  if (data.train_images == 0) throw ConfigError("data.train_images must be positive");
  if (data.proposals_per_image == 0) throw ConfigError("data.proposals_per_image must be positive");
  if (!(data.jitter >= 0.0 && data.jitter < 1.0)) throw ConfigError("data.jitter must lie in [0,1)");
  if (!(data.neg_fraction >= 0.0 && data.neg_fraction <= 1.0)) throw ConfigError("data.neg_fraction must lie in [0,1]");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

EvalOptions RunConfig::eval_options(std::uint64_t proposal_seed) const {
  EvalOptions o;
  o.proposals_per_image = data.proposals_per_image;
  o.jitter = data.jitter;
  o.neg_fraction = data.neg_fraction;
  o.proposal_seed = proposal_seed;
  return o;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  const Reader rd(source);
  if (!root || root.IsNull()) throw ConfigError(source + ": empty config; 'stages' is required");
  rd.check_keys(root, "",
                {"seed", "mode", "output_dir", "stages", "model", "chain", "loss", "data", "optimizer", "calibration"});

  RunConfig c = RunConfig::defaults();
  rd.get(root, "seed", "", c.seed);
  if (root["mode"]) {
    std::string m;
    rd.get(root, "mode", "", m);
    try {
      c.mode = parse_mode(m);
    } catch (const ConfigError& e) {
      rd.fail(root["mode"], e.what());
    }
  }
  rd.get(root, "output_dir", "", c.output_dir);

  const YAML::Node stages = root["stages"];
  if (!stages) throw ConfigError(source + ": missing required field 'stages' (list of {pooled_size, context})");
  if (!stages.IsSequence() || stages.size() == 0) rd.fail(stages, "stages must be a non-empty list");
  c.model.stages.clear();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string path = "stages[" + std::to_string(i) + "]";
    const YAML::Node s = stages[i];
    rd.check_keys(s, path, {"pooled_size", "context"});
    if (!s["pooled_size"]) rd.fail(s, path + ".pooled_size is required");
    if (!s["context"]) rd.fail(s, path + ".context is required");
    StageSpec spec;
    rd.get(s, "pooled_size", path, spec.pooled_size);
    rd.get(s, "context", path, spec.context);
    if (spec.pooled_size == 0) rd.fail(s["pooled_size"], path + ".pooled_size must be positive");
    if (!(spec.context >= 0.0)) rd.fail(s["context"], path + ".context must be nonnegative");
    c.model.stages.push_back(spec);
  }
  const std::size_t T = c.model.stages.size();

  if (const YAML::Node m = root["model"]) {
    rd.check_keys(m, "model", {"backbone_widths", "feature_dim", "classifier_std", "regression_std"});
    std::vector<std::size_t> widths;
    if (rd.get_list(m, "backbone_widths", "model", widths)) {
      if (widths.size() != c.model.backbone_widths.size()) rd.fail(m["backbone_widths"], "model.backbone_widths needs 4 entries");
      std::copy(widths.begin(), widths.end(), c.model.backbone_widths.begin());
    }
    rd.get(m, "feature_dim", "model", c.model.feature_dim);
    rd.get(m, "classifier_std", "model", c.model.classifier_std);
    rd.get(m, "regression_std", "model", c.model.regression_std);
  }

  c.thresholds.assign(T, 0.0);
  if (const YAML::Node ch = root["chain"]) {
    rd.check_keys(ch, "chain", {"normalization", "thresholds"});
    if (ch["normalization"]) {
      std::string n;
      rd.get(ch, "normalization", "chain", n);
      try {
        c.model.normalization = parse_normalization(n);
      } catch (const ConfigError& e) {
        rd.fail(ch["normalization"], e.what());
      }
    }
    if (rd.get_list(ch, "thresholds", "chain", c.thresholds) && c.thresholds.size() != T) {
      rd.fail(ch["thresholds"], "chain.thresholds needs " + std::to_string(T) + " entries");
    }
  }

  c.loss = LossConfig::defaults(T, c.model.num_classes, kDefaultTrainThreshold);
  if (const YAML::Node l = root["loss"]) {
    rd.check_keys(l, "loss", {"lambda", "train_thresholds", "log_floor"});
    if (rd.get_list(l, "lambda", "loss", c.loss.lambda) && c.loss.lambda.size() != T) {
      rd.fail(l["lambda"], "loss.lambda needs " + std::to_string(T) + " entries");
    }
    if (rd.get_list(l, "train_thresholds", "loss", c.loss.train_thresholds) && c.loss.train_thresholds.size() + 1 != T) {
      rd.fail(l["train_thresholds"], "loss.train_thresholds needs " + std::to_string(T - 1) + " entries");
    }
    rd.get(l, "log_floor", "loss", c.loss.log_floor);
  }

  if (const YAML::Node d = root["data"]) {
    rd.check_keys(d, "data",
                  {"seed", "num_classes", "image_size", "train_images", "test_images", "calib_images", "min_objects",
                   "max_objects", "min_object_size", "max_object_size", "noise_std", "color_jitter", "clutter",
                   "proposals_per_image", "jitter", "neg_fraction", "cache_dir"});
    rd.get(d, "seed", "data", c.data.seed);
    rd.get(d, "num_classes", "data", c.data.synth.num_classes);
    rd.get(d, "image_size", "data", c.data.synth.image_size);
    rd.get(d, "train_images", "data", c.data.train_images);
    rd.get(d, "test_images", "data", c.data.test_images);
    rd.get(d, "calib_images", "data", c.data.calib_images);
    rd.get(d, "min_objects", "data", c.data.synth.min_objects);
    rd.get(d, "max_objects", "data", c.data.synth.max_objects);
    rd.get(d, "min_object_size", "data", c.data.synth.min_object_size);
    rd.get(d, "max_object_size", "data", c.data.synth.max_object_size);
    rd.get(d, "noise_std", "data", c.data.synth.noise_std);
    rd.get(d, "color_jitter", "data", c.data.synth.color_jitter);
    rd.get(d, "clutter", "data", c.data.synth.clutter);
    rd.get(d, "proposals_per_image", "data", c.data.proposals_per_image);
    rd.get(d, "jitter", "data", c.data.jitter);
    rd.get(d, "neg_fraction", "data", c.data.neg_fraction);
    rd.get(d, "cache_dir", "data", c.data.cache_dir);
  }
  c.model.num_classes = c.data.synth.num_classes;
  c.loss.num_classes = c.data.synth.num_classes;

  if (const YAML::Node o = root["optimizer"]) {
    rd.check_keys(o, "optimizer",
                  {"lr", "weight_decay", "steps", "images_per_batch", "rois_per_image", "lr_milestones", "lr_decay",
                   "checkpoint_every"});
    rd.get(o, "lr", "optimizer", c.optimizer.lr);
    rd.get(o, "weight_decay", "optimizer", c.optimizer.weight_decay);
    rd.get(o, "steps", "optimizer", c.optimizer.steps);
    rd.get(o, "images_per_batch", "optimizer", c.optimizer.images_per_batch);
    rd.get(o, "rois_per_image", "optimizer", c.optimizer.rois_per_image);
    rd.get_list(o, "lr_milestones", "optimizer", c.optimizer.lr_milestones);
    rd.get(o, "lr_decay", "optimizer", c.optimizer.lr_decay);
    rd.get(o, "checkpoint_every", "optimizer", c.optimizer.checkpoint_every);
  }

  c.target_reject.assign(T, kDefaultTargetReject);
  if (const YAML::Node cal = root["calibration"]) {
    rd.check_keys(cal, "calibration", {"target_reject"});
    if (rd.get_list(cal, "target_reject", "calibration", c.target_reject) && c.target_reject.size() != T) {
      rd.fail(cal["target_reject"], "calibration.target_reject needs " + std::to_string(T) + " entries");
    }
  }

  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.string());
}

std::string serialize_run_config(const RunConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "mode" << YAML::Value << std::string(to_string(c.mode));
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir;

  out << YAML::Key << "stages" << YAML::Value << YAML::BeginSeq;
  for (const auto& s : c.model.stages) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "pooled_size" << YAML::Value << s.pooled_size << YAML::Key
        << "context" << YAML::Value << s.context << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "backbone_widths" << YAML::Value << YAML::Flow
      << std::vector<std::size_t>(c.model.backbone_widths.begin(), c.model.backbone_widths.end());
  out << YAML::Key << "feature_dim" << YAML::Value << c.model.feature_dim;
  out << YAML::Key << "classifier_std" << YAML::Value << c.model.classifier_std;
  out << YAML::Key << "regression_std" << YAML::Value << c.model.regression_std;
  out << YAML::EndMap;

  out << YAML::Key << "chain" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "normalization" << YAML::Value << std::string(to_string(c.model.normalization));
  out << YAML::Key << "thresholds" << YAML::Value << YAML::Flow << c.thresholds;
  out << YAML::EndMap;

  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lambda" << YAML::Value << YAML::Flow << c.loss.lambda;
  out << YAML::Key << "train_thresholds" << YAML::Value << YAML::Flow << c.loss.train_thresholds;
  out << YAML::Key << "log_floor" << YAML::Value << c.loss.log_floor;
  out << YAML::EndMap;

  const auto& d = c.data;
  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << d.seed;
  out << YAML::Key << "num_classes" << YAML::Value << d.synth.num_classes;
  out << YAML::Key << "image_size" << YAML::Value << d.synth.image_size;
  out << YAML::Key << "train_images" << YAML::Value << d.train_images;
  out << YAML::Key << "test_images" << YAML::Value << d.test_images;
  out << YAML::Key << "calib_images" << YAML::Value << d.calib_images;
  out << YAML::Key << "min_objects" << YAML::Value << d.synth.min_objects;
  out << YAML::Key << "max_objects" << YAML::Value << d.synth.max_objects;
  out << YAML::Key << "min_object_size" << YAML::Value << d.synth.min_object_size;
  out << YAML::Key << "max_object_size" << YAML::Value << d.synth.max_object_size;
  out << YAML::Key << "noise_std" << YAML::Value << d.synth.noise_std;
  out << YAML::Key << "color_jitter" << YAML::Value << d.synth.color_jitter;
  out << YAML::Key << "clutter" << YAML::Value << d.synth.clutter;
  out << YAML::Key << "proposals_per_image" << YAML::Value << d.proposals_per_image;
  out << YAML::Key << "jitter" << YAML::Value << d.jitter;
  out << YAML::Key << "neg_fraction" << YAML::Value << d.neg_fraction;
  out << YAML::Key << "cache_dir" << YAML::Value << d.cache_dir;
  out << YAML::EndMap;

  const auto& o = c.optimizer;
  out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lr" << YAML::Value << o.lr;
  out << YAML::Key << "weight_decay" << YAML::Value << o.weight_decay;
  out << YAML::Key << "steps" << YAML::Value << o.steps;
  out << YAML::Key << "images_per_batch" << YAML::Value << o.images_per_batch;
  out << YAML::Key << "rois_per_image" << YAML::Value << o.rois_per_image;
  out << YAML::Key << "lr_milestones" << YAML::Value << YAML::Flow << o.lr_milestones;
  out << YAML::Key << "lr_decay" << YAML::Value << o.lr_decay;
  out << YAML::Key << "checkpoint_every" << YAML::Value << o.checkpoint_every;
  out << YAML::EndMap;

  out << YAML::Key << "calibration" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "target_reject" << YAML::Value << YAML::Flow << c.target_reject;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace ccnet::cli
