#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "ccnet/tensor.hpp"

namespace ccnet {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error, so that gradients that are
  // zero up to roundoff do not blow the ratio up.
  double abs_floor = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/- probes crossed a kink (relu, argmax, clamp, mask).
  std::size_t skipped_nonsmooth = 0;
  std::string worst;  // "input#i[flat]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

// Compares reverse-mode gradients of the scalar `fragment()` with respect to
// every tensor in `inputs` against central differences. The fragment must be
// deterministic and read `inputs` afresh on each call.
GradCheckReport finite_diff_check(const std::function<Tensor()>& fragment, std::span<Tensor> inputs,
                                  double tolerance, const GradCheckOptions& options = {});

}  // namespace ccnet
