#include "ccnet/train.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "ccnet/error.hpp"
#include "ccnet/random.hpp"
#include "json.hpp"

namespace ccnet {

void TrainOptions::validate() const {
  if (images_per_batch == 0) throw ConfigError("optimizer.images_per_batch must be positive");
  if (rois_per_image == 0) throw ConfigError("optimizer.rois_per_image must be positive");
  if (!(lr >= 0.0)) throw ConfigError("optimizer.lr must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be nonnegative");
  if (!(lr_decay > 0.0)) throw ConfigError("optimizer.lr_decay must be positive");
  for (double m : lr_milestones) {
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("optimizer.lr_milestones must lie in (0,1)");
  }
}

double TrainOptions::lr_at(std::size_t step) const {
  double rate = lr;
  for (double m : lr_milestones) {
    if (static_cast<double>(step) >= m * static_cast<double>(steps)) rate *= lr_decay;
  }
  return rate;
}

LossReport train_step(Model& model, const Tensor& images, std::span<const RoiRef> rois,
                      std::span<const BoxTarget> targets, const LossConfig& loss, Mode mode, double lr,
                      double weight_decay) {
  auto fwd = model.forward(images, rois, mode);
  LossResult result = total_loss(fwd.chain.probs, fwd.box_deltas, targets, loss);
  // Parameters outside the active graph keep a zero gradient.
  model.parameters().zero_grad();
  backward(result.total);
  sgd_step(model.parameters().all(), lr, weight_decay);
  return result.report;
}

namespace {

void dump_batch(const std::filesystem::path& path, std::size_t step, std::span<const std::size_t> images,
                std::span<const RoiRef> rois, std::span<const BoxTarget> targets, const std::string& what) {
  nlohmann::json j;
  j["step"] = step;
  j["error"] = what;
  j["images"] = std::vector<std::size_t>(images.begin(), images.end());
  auto arr = nlohmann::json::array();
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const Box& b = rois[i].box;
    arr.push_back({{"image", images[rois[i].image]},
                   {"box", {b.cx, b.cy, b.w, b.h}},
                   {"label", targets[i].label},
                   {"offsets", targets[i].offsets ? nlohmann::json(*targets[i].offsets) : nlohmann::json(nullptr)}});
  }
  j["rois"] = std::move(arr);
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(1) << '\n';
}

}  // namespace

std::vector<LossReport> train(Model& model, std::span<const SynthScene> scenes, const LossConfig& loss, Mode mode,
                              const TrainOptions& options, const StepCallback& on_step) {
  options.validate();
  loss.validate();
  if (scenes.empty()) throw ConfigError("train: empty dataset");
  if (loss.stages != model.config().stages.size()) throw ConfigError("train: loss and model stage counts differ");
  const std::size_t per_batch = std::min(options.images_per_batch, scenes.size());

  std::vector<std::size_t> order(scenes.size());
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  std::vector<LossReport> log;
  log.reserve(options.steps);

  for (std::size_t step = 0; step < options.steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < per_batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(options.seed, 0xE90C, epoch++));
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    std::vector<RoiRef> rois;
    std::vector<BoxTarget> targets;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto props = gen_proposals(scenes[batch[b]], options.rois_per_image, options.jitter, options.neg_fraction,
                                       derive_seed(options.seed, step, batch[b]));
      for (const auto& p : props) {
        rois.push_back({b, p.box});
        targets.push_back(p.target);
      }
    }

    LossReport report;
    try {
      report = train_step(model, batch_images(scenes, batch), rois, targets, loss, mode, options.lr_at(step),
                          options.weight_decay);
    } catch (const NumericError& e) {
      const auto path = options.diagnostic_path.empty() ? std::filesystem::path("nonfinite_batch.json")
                                                        : options.diagnostic_path;
      dump_batch(path, step, batch, rois, targets, e.what());
      throw NumericError("non-finite value at step " + std::to_string(step) + " (" + e.what() +
                         "); batch dumped to " + path.string());
    }
    report.step = step;
    if (on_step) on_step(report);
    log.push_back(std::move(report));

    if (options.checkpoint_every > 0 && (step + 1) % options.checkpoint_every == 0) {
      std::filesystem::create_directories(options.checkpoint_dir);
      save_checkpoint(model.parameters(),
                      options.checkpoint_dir / ("step_" + std::to_string(step + 1) + ".ckpt"));
    }
  }
  return log;
}

}  // namespace ccnet
