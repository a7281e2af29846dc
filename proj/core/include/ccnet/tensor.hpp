#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ccnet {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage, which is how the
// tape keeps inputs alive until backward() runs. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access. Only meaningful on leaves (parameters, inputs);
  // writing into a recorded intermediate invalidates its backward closure.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();
  void accumulate_grad(std::span<const double> delta) const;

  // Same values, no history, no gradient slot.
  Tensor detach() const;
  Tensor clone() const;

  friend bool same_storage(const Tensor& a, const Tensor& b) { return a.node_ == b.node_; }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Backward closure of a recorded op. Receives dLoss/dOutput; must push
// gradients into its inputs via Tensor::accumulate_grad.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

// Wraps freshly computed `values` as the output of an op. A backward closure
// is attached only when some input requires gradients and grad mode is on.
// Throws NumericError if any value is not finite.
Tensor record(std::string_view op, Shape shape, std::vector<double> values,
              std::vector<Tensor> inputs, BackwardFn backward);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable tensor that requires grad.
void backward(const Tensor& loss);

class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Collects a hash of every piecewise branch taken during a forward pass (relu
// sign, pooling argmax, clamp hits, loss masks). Two evaluations with equal
// signatures lie on the same smooth piece, which is what a finite-difference
// check needs to know.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t signature() const { return signature_; }

 private:
  friend void note_branch(std::uint64_t decision);
  BranchRecorder* previous_;
  std::uint64_t signature_ = 1469598103934665603ULL;
};

bool branch_recording();
void note_branch(std::uint64_t decision);

}  // namespace ccnet
