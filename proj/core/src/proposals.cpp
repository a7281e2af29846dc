#include "ccnet/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ccnet/error.hpp"

namespace ccnet {

namespace {

double max_iou(const Box& box, std::span<const SceneObject> objects) {
  double best = 0.0;
  for (const auto& o : objects) best = std::max(best, iou(box, o.box));
  return best;
}

Box clip(const Box& b, double size) {
  return Box::from_corners(std::max(0.0, b.x1()), std::max(0.0, b.y1()), std::min(size, b.x2()),
                           std::min(size, b.y2()));
}

}  // namespace

BoxTarget assign_target(const Box& box, std::span<const SceneObject> objects) {
  double best = 0.0;
  const SceneObject* match = nullptr;
  for (const auto& o : objects) {
    const double v = iou(box, o.box);
    if (v > best) {
      best = v;
      match = &o;
    }
  }
  if (match == nullptr || best < kPositiveIou) return {};
  return {match->label, bbox_encode(box, match->box)};
}

std::vector<Proposal> gen_proposals(const SynthScene& scene, std::size_t n_per_image, double jitter,
                                    double neg_fraction, std::uint64_t seed) {
  if (scene.objects.empty()) throw ContractError("gen_proposals: scene has no objects");
  if (jitter < 0.0 || jitter >= 1.0) throw ConfigError("gen_proposals: jitter must lie in [0,1)");
  if (neg_fraction < 0.0 || neg_fraction > 1.0) throw ConfigError("gen_proposals: neg_fraction must lie in [0,1]");
  const double size = static_cast<double>(scene.image.extent(2));
  const auto n_neg = static_cast<std::size_t>(std::llround(neg_fraction * static_cast<double>(n_per_image)));
  const std::size_t n_pos = n_per_image - n_neg;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Proposal> out;
  out.reserve(n_per_image);
  for (std::size_t i = 0; i < n_pos; ++i) {
    const Box& gt = scene.objects[i % scene.objects.size()].box;
    Box b{gt.cx + jitter * sym(rng) * gt.w, gt.cy + jitter * sym(rng) * gt.h, gt.w * (1.0 + jitter * sym(rng)),
          gt.h * (1.0 + jitter * sym(rng))};
    b = jitter == 0.0 ? gt : clip(b, size);
    out.push_back({b, assign_target(b, scene.objects)});
  }

  // Half the negatives are near misses around an object, half anywhere.
  const double min_side = 6.0;
  for (std::size_t i = 0; i < n_neg; ++i) {
    Box b;
    for (int attempt = 0;; ++attempt) {
      if (i % 2 == 0 && attempt < 50) {
        const Box& gt = scene.objects[(i / 2) % scene.objects.size()].box;
        const double angle = 2.0 * std::acos(-1.0) * unit(rng);
        const double shift = 0.6 + 0.6 * unit(rng);
        b = {gt.cx + shift * gt.w * std::cos(angle), gt.cy + shift * gt.h * std::sin(angle),
             gt.w * (0.7 + 0.6 * unit(rng)), gt.h * (0.7 + 0.6 * unit(rng))};
      } else {
        const double w = min_side + unit(rng) * (0.6 * size - min_side);
        const double h = min_side + unit(rng) * (0.6 * size - min_side);
        b = {0.5 * w + unit(rng) * (size - w), 0.5 * h + unit(rng) * (size - h), w, h};
      }
      b = clip(b, size);
      if (b.w >= min_side && b.h >= min_side && max_iou(b, scene.objects) < kNegativeIou) break;
      if (attempt > 10000) throw ContractError("gen_proposals: no room for a negative box");
    }
    out.push_back({b, {}});
  }
  return out;
}

}  // namespace ccnet
