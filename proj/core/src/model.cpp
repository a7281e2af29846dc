#include "ccnet/model.hpp"

#include <array>
#include <random>
#include <string>

#include "ccnet/error.hpp"
#include "ccnet/ops.hpp"
#include "ccnet/random.hpp"

namespace ccnet {

namespace {

constexpr std::array<Mode, 4> kModes{Mode::single_stage_baseline, Mode::conventional_cascade, Mode::chained_cascade,
                                     Mode::chained_cascade_no_feature_chain};

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::single_stage_baseline: return "single_stage_baseline";
    case Mode::conventional_cascade: return "conventional_cascade";
    case Mode::chained_cascade: return "chained_cascade";
    case Mode::chained_cascade_no_feature_chain: return "chained_cascade_no_feature_chain";
  }
  return "unknown";
}

Mode parse_mode(std::string_view text) {
  for (Mode m : kModes) {
    if (to_string(m) == text) return m;
  }
  std::string valid;
  for (Mode m : kModes) valid += (valid.empty() ? "" : ", ") + std::string(to_string(m));
  throw ConfigError("unknown mode '" + std::string(text) + "'; valid modes: " + valid);
}

std::span<const Mode> all_modes() { return kModes; }

ChainOptions chain_options(Mode mode, Normalization normalization) {
  ChainOptions o;
  o.normalization = normalization;
  o.feature_chaining = mode != Mode::chained_cascade_no_feature_chain;
  o.scores = mode == Mode::conventional_cascade ? ScoreChaining::conventional : ScoreChaining::chained;
  return o;
}

std::size_t active_stages(Mode mode, std::size_t configured_stages) {
  return mode == Mode::single_stage_baseline ? 1 : configured_stages;
}

void ModelConfig::validate() const {
  if (image_channels == 0) throw ConfigError("model.image_channels must be positive");
  for (std::size_t w : backbone_widths) {
    if (w == 0) throw ConfigError("model.backbone_widths entries must be positive");
  }
  if (feature_dim == 0) throw ConfigError("model.feature_dim must be positive");
  if (num_classes < 1) throw ConfigError("model.num_classes must be positive");
  if (stages.empty()) throw ConfigError("stages must list at least one stage");
  for (const auto& s : stages) {
    if (s.pooled_size == 0) throw ConfigError("stages[].pooled_size must be positive");
    if (s.context < 0.0) throw ConfigError("stages[].context must be nonnegative");
  }
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  backbone_ = Backbone(store_, config_.image_channels, config_.backbone_widths, derive_seed(seed, 1));
  heads_ = make_stage_heads(store_, config_.stages.size(), backbone_.out_channels(), config_.feature_dim,
                            derive_seed(seed, 2));
  chain_ = ChainParams::create(store_, config_.stages.size(), config_.feature_dim, config_.num_classes,
                               derive_seed(seed, 3), config_.classifier_std);
  std::mt19937_64 rng(derive_seed(seed, 4));
  std::normal_distribution<double> dist(0.0, config_.regression_std);
  std::vector<double> w(4 * config_.num_classes * config_.feature_dim);
  for (auto& x : w) x = dist(rng);
  reg_weight_ = store_.add("bbox.weight", Tensor::from({4 * config_.num_classes, config_.feature_dim}, std::move(w)));
  reg_bias_ = store_.add("bbox.bias", Tensor::zeros({4 * config_.num_classes}), false);
}

Model::Forward Model::forward(const Tensor& images, std::span<const RoiRef> rois, Mode mode) const {
  if (images.rank() != 4) throw ConfigError("model: images must be [N,C,H,W]");
  const double image_h = static_cast<double>(images.extent(2));
  const double image_w = static_cast<double>(images.extent(3));
  const std::size_t stages = active_stages(mode, config_.stages.size());

  Forward out;
  out.featmaps = backbone_.forward(images);
  out.o = stage_features(out.featmaps, rois, std::span(config_.stages).first(stages), heads_, image_w, image_h,
                         Backbone::kStride);
  out.chain = chain_forward(out.o, chain_, chain_options(mode, config_.normalization));
  out.box_deltas = box_deltas(out.chain.f.back());
  return out;
}

Tensor Model::box_deltas(const Tensor& f) const { return ops::linear(f, reg_weight_, reg_bias_); }

}  // namespace ccnet
