#include "ccnet/calibrate.hpp"

#include <algorithm>
#include <cmath>

#include "ccnet/error.hpp"

namespace ccnet {

std::vector<double> calibrate_thresholds(std::span<const ChainTrace> traces, std::span<const std::size_t> labels,
                                         std::span<const double> target_reject) {
  if (traces.size() != labels.size()) throw ConfigError("calibrate: one label per trace required");
  const std::size_t stages = target_reject.size();
  for (double t : target_reject) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("calibrate: target rates must lie in [0,1]");
  }

  std::vector<const ChainTrace*> alive;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (labels[i] != kBackground) continue;
    if (traces[i].stages.size() < stages) {
      throw ContractError("calibrate: traces must be recorded with zero thresholds over all stages");
    }
    alive.push_back(&traces[i]);
  }

  std::vector<double> r(stages, 0.0);
  for (std::size_t t = 0; t < stages; ++t) {
    std::vector<double> scores;
    scores.reserve(alive.size());
    for (const auto* tr : alive) scores.push_back(max_foreground(tr->stages[t].probs));
    const auto n_rej = static_cast<std::size_t>(std::llround(target_reject[t] * static_cast<double>(scores.size())));
    if (n_rej > 0) {
      std::vector<double> sorted = scores;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n_rej - 1), sorted.end());
      r[t] = sorted[n_rej - 1];
    }
    std::vector<const ChainTrace*> next;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (scores[i] > r[t]) next.push_back(alive[i]);
    }
    alive = std::move(next);
  }
  return r;
}

}  // namespace ccnet
