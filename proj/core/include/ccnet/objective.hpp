#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccnet/box.hpp"
#include "ccnet/tensor.hpp"

namespace ccnet {

// lambda_T = 1, lambda_t = 0.02 / T for t < T.
std::vector<double> default_stage_weights(std::size_t stages);

struct LossConfig {
  std::size_t stages = 4;
  std::size_t num_classes = 8;  // K, foreground only
  std::vector<double> lambda;            // T weights
  std::vector<double> train_thresholds;  // T-1 values r_i used by the training mask
  double log_floor = 1e-12;

  static LossConfig defaults(std::size_t stages, std::size_t num_classes, double train_threshold);
  void validate() const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// RCNN box offsets (tx, ty, tw, th).
using Offsets = std::array<double, 4>;

struct BoxTarget {
  std::size_t label = 0;           // 0 = background
  std::optional<Offsets> offsets;  // present iff label > 0
};

// tx = (gx-px)/pw, ty = (gy-py)/ph, tw = log(gw/pw), th = log(gh/ph).
Offsets bbox_encode(const Box& proposal, const Box& gt);
Box bbox_decode(const Box& proposal, const Offsets& offsets);

// u_1 = 1; u_t = prod_{i<t} [p_{i,k*} < r_i]. `label_probs[t]` is p_{t,k*}.
std::vector<int> train_mask(std::span<const double> label_probs, std::span<const double> thresholds);
std::vector<int> train_mask(std::span<const std::vector<double>> probs, std::size_t label,
                            std::span<const double> thresholds);

// -sum_t lambda_t u_t log(max(p_{t,k*}, floor)) for one sample.
double cls_loss(std::span<const std::vector<double>> probs, std::size_t label, const LossConfig& config);

double smooth_l1(double d);
// Sum of smooth-L1 over the four coordinates; 0 for background.
double loc_loss(const Offsets& predicted, const BoxTarget& target);

struct LossReport {
  std::size_t step = 0;
  std::vector<double> cls_per_stage;      // batch-mean contribution of each stage
  std::vector<std::size_t> mask_counts;   // samples with u_t = 1
  double loc = 0.0;
  double total = 0.0;

  // {"step":..,"cls_per_stage":[..],"mask_counts":[..],"loc":..,"total":..}
  std::string to_json() const;
};

struct LossResult {
  Tensor total;
  LossReport report;
};

// Batch objective: mean over RoIs of L_cls + L_loc.
//   probs[t]     [R,K+1] stage probabilities (T tensors, T <= config.stages)
//   box_deltas   [R,4K] class-specific regression outputs
// With fewer probability tensors than configured stages the weights are
// default_stage_weights(probs.size()).
LossResult total_loss(std::span<const Tensor> probs, const Tensor& box_deltas, std::span<const BoxTarget> targets,
                      const LossConfig& config);

// Differentiable pieces of the above, both summed (not averaged) over RoIs.
Tensor cls_loss(std::span<const Tensor> probs, std::span<const std::size_t> labels, std::span<const double> lambda,
                std::span<const double> thresholds, double log_floor, std::vector<double>* per_stage = nullptr,
                std::vector<std::size_t>* mask_counts = nullptr);
Tensor loc_loss(const Tensor& box_deltas, std::span<const BoxTarget> targets);

}  // namespace ccnet
