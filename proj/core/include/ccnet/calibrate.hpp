#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ccnet/chain.hpp"

namespace ccnet {

// Per-stage thresholds from traces recorded without rejection (every trace
// must hold all T stages). Stage t is calibrated on the negatives that survive
// the already-calibrated stages before it: with m survivors, r_t is the
// round(target_t * m)-th smallest max-foreground probability, so the gate
// (pass iff max-fg > r_t) rejects exactly that many barring ties. No survivors
// or a zero count gives r_t = 0.
std::vector<double> calibrate_thresholds(std::span<const ChainTrace> traces, std::span<const std::size_t> labels,
                                         std::span<const double> target_reject);

}  // namespace ccnet
