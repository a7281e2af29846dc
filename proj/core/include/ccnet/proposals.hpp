#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ccnet/box.hpp"
#include "ccnet/objective.hpp"
#include "ccnet/synth.hpp"

namespace ccnet {

struct Proposal {
  Box box;
  BoxTarget target;
};

inline constexpr double kPositiveIou = 0.5;
inline constexpr double kNegativeIou = 0.3;

// IoU >= 0.5 with the best-overlapping object gives that object's label and
// offsets; anything else is background.
BoxTarget assign_target(const Box& box, std::span<const SceneObject> objects);

// round(n * neg_fraction) random boxes with IoU < 0.3 against every object,
// the rest jittered copies of the objects (centre and size perturbed by up to
// `jitter` of the object size). All proposals lie inside the image and are
// labeled by assign_target, so a heavily jittered copy can come out as
// background.
std::vector<Proposal> gen_proposals(const SynthScene& scene, std::size_t n_per_image, double jitter,
                                    double neg_fraction, std::uint64_t seed);

}  // namespace ccnet
