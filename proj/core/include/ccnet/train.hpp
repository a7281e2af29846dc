#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "ccnet/model.hpp"
#include "ccnet/objective.hpp"
#include "ccnet/proposals.hpp"
#include "ccnet/synth.hpp"

namespace ccnet {

struct TrainOptions {
  std::size_t steps = 400;
  std::size_t images_per_batch = 2;
  std::size_t rois_per_image = 64;
  double jitter = 0.25;
  double neg_fraction = 0.75;
  double lr = 0.01;
  double weight_decay = 0.0005;
  std::vector<double> lr_milestones{0.6, 0.85};  // fractions of `steps`
  double lr_decay = 0.1;
  std::size_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_dir;
  std::filesystem::path diagnostic_path;  // dump target on a non-finite loss
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(std::size_t step) const;

  friend bool operator==(const TrainOptions&, const TrainOptions&) = default;
};

using StepCallback = std::function<void(const LossReport&)>;

// One SGD step on the given RoIs. Exposed for tests and small experiments.
LossReport train_step(Model& model, const Tensor& images, std::span<const RoiRef> rois,
                      std::span<const BoxTarget> targets, const LossConfig& loss, Mode mode, double lr,
                      double weight_decay);

// Deterministic loop: epoch-shuffled image order and freshly seeded proposals
// per step. Throws NumericError after writing a diagnostic dump if the loss
// goes non-finite.
std::vector<LossReport> train(Model& model, std::span<const SynthScene> scenes, const LossConfig& loss, Mode mode,
                              const TrainOptions& options, const StepCallback& on_step = {});

}  // namespace ccnet
