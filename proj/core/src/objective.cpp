#include "ccnet/objective.hpp"

#include <cmath>

#include "ccnet/error.hpp"
#include "ccnet/ops.hpp"
#include "json.hpp"

namespace ccnet {

std::vector<double> default_stage_weights(std::size_t stages) {
  if (stages == 0) throw ConfigError("stage weights need at least one stage");
  std::vector<double> w(stages, 0.02 / static_cast<double>(stages));
  w.back() = 1.0;
  return w;
}

LossConfig LossConfig::defaults(std::size_t stages, std::size_t num_classes, double train_threshold) {
  LossConfig c;
  c.stages = stages;
  c.num_classes = num_classes;
  c.lambda = default_stage_weights(stages);
  c.train_thresholds.assign(stages - 1, train_threshold);
  return c;
}

void LossConfig::validate() const {
  if (stages == 0) throw ConfigError("loss: stages must be positive");
  if (num_classes == 0) throw ConfigError("loss: num_classes must be positive");
  if (lambda.size() != stages) throw ConfigError("loss: lambda needs " + std::to_string(stages) + " entries");
  if (train_thresholds.size() + 1 != stages) {
    throw ConfigError("loss: train_thresholds needs " + std::to_string(stages - 1) + " entries");
  }
  for (double r : train_thresholds) {
    if (r < 0.0 || r > 1.0) throw ConfigError("loss: train thresholds must lie in [0,1]");
  }
  for (double l : lambda) {
    if (l < 0.0) throw ConfigError("loss: lambda entries must be nonnegative");
  }
}

Offsets bbox_encode(const Box& proposal, const Box& gt) {
  if (!proposal.valid() || !gt.valid()) throw ContractError("bbox_encode: boxes need positive width and height");
  return {(gt.cx - proposal.cx) / proposal.w, (gt.cy - proposal.cy) / proposal.h, std::log(gt.w / proposal.w),
          std::log(gt.h / proposal.h)};
}

Box bbox_decode(const Box& proposal, const Offsets& d) {
  return {proposal.cx + d[0] * proposal.w, proposal.cy + d[1] * proposal.h, proposal.w * std::exp(d[2]),
          proposal.h * std::exp(d[3])};
}

std::vector<int> train_mask(std::span<const double> label_probs, std::span<const double> thresholds) {
  if (label_probs.empty()) return {};
  if (thresholds.size() + 1 < label_probs.size()) throw ConfigError("train_mask: need T-1 thresholds");
  std::vector<int> u(label_probs.size(), 0);
  u[0] = 1;
  for (std::size_t t = 1; t < label_probs.size(); ++t) {
    const bool kept = label_probs[t - 1] < thresholds[t - 1];
    note_branch(kept);
    u[t] = (u[t - 1] == 1 && kept) ? 1 : 0;
  }
  return u;
}

std::vector<int> train_mask(std::span<const std::vector<double>> probs, std::size_t label,
                            std::span<const double> thresholds) {
  std::vector<double> lp;
  lp.reserve(probs.size());
  for (const auto& p : probs) lp.push_back(p.at(label));
  return train_mask(lp, thresholds);
}

double cls_loss(std::span<const std::vector<double>> probs, std::size_t label, const LossConfig& config) {
  if (probs.size() > config.lambda.size()) throw ConfigError("cls_loss: more stages than lambda weights");
  const auto u = train_mask(probs, label, config.train_thresholds);
  double loss = 0.0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (u[t] == 0) continue;
    loss -= config.lambda[t] * std::log(std::max(probs[t].at(label), config.log_floor));
  }
  return loss;
}

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double loc_loss(const Offsets& predicted, const BoxTarget& target) {
  if (target.label == 0) return 0.0;
  if (!target.offsets) throw ContractError("loc_loss: foreground target without offsets");
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += smooth_l1(predicted[i] - (*target.offsets)[i]);
  return s;
}

std::string LossReport::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["cls_per_stage"] = cls_per_stage;
  j["mask_counts"] = mask_counts;
  j["loc"] = loc;
  j["total"] = total;
  return j.dump();
}

Tensor cls_loss(std::span<const Tensor> probs, std::span<const std::size_t> labels, std::span<const double> lambda,
                std::span<const double> thresholds, double log_floor, std::vector<double>* per_stage,
                std::vector<std::size_t>* mask_counts) {
  if (probs.empty()) throw ConfigError("cls_loss: no stages");
  if (lambda.size() < probs.size()) throw ConfigError("cls_loss: missing lambda weights");
  const std::size_t rows = labels.size();
  const std::size_t stages = probs.size();

  // u[r][t] from the detached probabilities.
  std::vector<std::vector<int>> u(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> lp(stages);
    for (std::size_t t = 0; t < stages; ++t) {
      if (probs[t].rank() != 2 || probs[t].extent(0) != rows) throw ConfigError("cls_loss: probs must be [R,K+1]");
      lp[t] = probs[t].values()[r * probs[t].extent(1) + labels[r]];
    }
    u[r] = train_mask(lp, thresholds);
  }

  if (per_stage) per_stage->assign(stages, 0.0);
  if (mask_counts) mask_counts->assign(stages, 0);
  Tensor total;
  for (std::size_t t = 0; t < stages; ++t) {
    Tensor logp = ops::log(ops::pick(probs[t], labels), log_floor);
    std::vector<double> w(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      w[r] = -lambda[t] * static_cast<double>(u[r][t]);
      if (mask_counts) (*mask_counts)[t] += static_cast<std::size_t>(u[r][t]);
    }
    Tensor term = ops::weighted_sum(logp, w);
    if (per_stage) (*per_stage)[t] = term.item();
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

Tensor loc_loss(const Tensor& box_deltas, std::span<const BoxTarget> targets) {
  if (box_deltas.rank() != 2 || box_deltas.extent(0) != targets.size() || box_deltas.extent(1) % 4 != 0) {
    throw ConfigError("loc_loss: box deltas must be [R,4K], got " + to_string(box_deltas.shape()));
  }
  const std::size_t width = box_deltas.extent(1);
  auto pv = box_deltas.values();
  double loss = 0.0;
  std::vector<double> slope(pv.size(), 0.0);
  const bool rec = branch_recording();
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const BoxTarget& tg = targets[r];
    if (tg.label == 0) continue;
    if (!tg.offsets) throw ContractError("loc_loss: foreground target without offsets");
    if (tg.label * 4 > width) throw ConfigError("loc_loss: label exceeds regression outputs");
    const std::size_t base = r * width + (tg.label - 1) * 4;
    for (std::size_t i = 0; i < 4; ++i) {
      const double d = pv[base + i] - (*tg.offsets)[i];
      loss += smooth_l1(d);
      if (rec) note_branch(std::abs(d) < 1.0);
      slope[base + i] = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
    }
  }
  return record("loc_loss", {}, {loss}, {box_deltas}, [box_deltas, slope = std::move(slope)](std::span<const double> g) {
    std::vector<double> dx(slope.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = slope[i] * g[0];
    box_deltas.accumulate_grad(dx);
  });
}

LossResult total_loss(std::span<const Tensor> probs, const Tensor& box_deltas, std::span<const BoxTarget> targets,
                      const LossConfig& config) {
  if (probs.empty() || probs.size() > config.stages) throw ConfigError("total_loss: bad stage count");
  if (targets.empty()) throw ConfigError("total_loss: empty batch");
  std::vector<std::size_t> labels;
  labels.reserve(targets.size());
  for (const auto& t : targets) {
    if (t.label > config.num_classes) throw ConfigError("total_loss: label out of range");
    if ((t.label > 0) != t.offsets.has_value()) throw ContractError("total_loss: offsets must be present iff label > 0");
    labels.push_back(t.label);
  }
  std::vector<double> lambda = probs.size() == config.stages ? config.lambda : default_stage_weights(probs.size());
  std::span<const double> thresholds(config.train_thresholds.data(), probs.size() - 1);

  LossResult result;
  Tensor cls = cls_loss(probs, labels, lambda, thresholds, config.log_floor, &result.report.cls_per_stage,
                        &result.report.mask_counts);
  Tensor loc = loc_loss(box_deltas, targets);
  const double inv = 1.0 / static_cast<double>(targets.size());
  result.total = ops::mul_scalar(ops::add(cls, loc), inv);
  for (auto& c : result.report.cls_per_stage) c *= inv;
  result.report.loc = loc.item() * inv;
  result.report.total = result.total.item();
  return result;
}

}  // namespace ccnet
