#include "ccnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "ccnet/error.hpp"

namespace ccnet {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const std::function<Tensor()>& fragment) {
  NoGradGuard no_grad;
  BranchRecorder recorder;
  Tensor out = fragment();
  return {out.item(), recorder.signature()};
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& fragment, std::span<Tensor> inputs,
                                  double tolerance, const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = tolerance;

  for (auto& t : inputs) {
    if (!t.is_leaf()) throw ContractError("finite_diff_check: inputs must be leaf tensors");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::uint64_t base_signature = 0;
  {
    BranchRecorder recorder;
    Tensor loss = fragment();
    base_signature = recorder.signature();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  std::mt19937_64 rng(options.seed);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      double& x = t.mutable_values()[i];
      const double saved = x;
      x = saved + options.step;
      const Probe plus = evaluate(fragment);
      x = saved - options.step;
      const Probe minus = evaluate(fragment);
      x = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double a = analytic[ti][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (report.worst.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "input#" + std::to_string(ti) + "[" + std::to_string(i) + "]";
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  for (auto& t : inputs) t.clear_grad();
  return report;
}

}  // namespace ccnet
