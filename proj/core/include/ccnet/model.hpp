#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ccnet/chain.hpp"
#include "ccnet/parameter.hpp"
#include "ccnet/roi.hpp"

namespace ccnet {

// The four ablation settings.
enum class Mode {
  single_stage_baseline,             // stage 1 only: a plain fast-RCNN style head
  conventional_cascade,              // feature chaining, per-stage scores
  chained_cascade,                   // feature chaining and score chaining
  chained_cascade_no_feature_chain,  // score chaining, f_t = o_t
};

std::string_view to_string(Mode mode);
// Throws ConfigError listing the valid names.
Mode parse_mode(std::string_view text);
std::span<const Mode> all_modes();

ChainOptions chain_options(Mode mode, Normalization normalization = Normalization::softmax);
std::size_t active_stages(Mode mode, std::size_t configured_stages);

struct ModelConfig {
  std::size_t image_channels = 3;
  std::array<std::size_t, 4> backbone_widths{16, 32, 32, 32};
  std::size_t feature_dim = 64;  // C1
  std::size_t num_classes = 8;   // K
  std::vector<StageSpec> stages = default_stage_specs();
  Normalization normalization = Normalization::softmax;
  double classifier_std = 0.01;
  double regression_std = 0.001;

  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class Model {
 public:
  struct Forward {
    Tensor featmaps;
    std::vector<Tensor> o;
    ChainOutputs chain;
    Tensor box_deltas;  // [R,4K] from the last evaluated f_t
  };

  Model(const ModelConfig& config, std::uint64_t seed);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  ChainParams& chain() { return chain_; }
  const ChainParams& chain() const { return chain_; }
  const Backbone& backbone() const { return backbone_; }
  std::span<const StageHead> heads() const { return heads_; }

  // images [N,C,H,W]; every RoI refers to one of the N images.
  Forward forward(const Tensor& images, std::span<const RoiRef> rois, Mode mode) const;

  // f [R,C1] or [C1] -> class-specific offsets [R,4K] or [4K].
  Tensor box_deltas(const Tensor& f) const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  Backbone backbone_;
  std::vector<StageHead> heads_;
  ChainParams chain_;
  Tensor reg_weight_;
  Tensor reg_bias_;
};

}  // namespace ccnet
