#include "ccnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ccnet/error.hpp"

namespace ccnet {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty == no gradient slot
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

struct TensorAccess {
  static const std::shared_ptr<detail::Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }
};

namespace {

thread_local bool grad_mode_enabled = true;
thread_local BranchRecorder* active_recorder = nullptr;

void check_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ConfigError("tensor extents must be positive, got " + to_string(shape));
  }
}

detail::Node& require(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw ContractError("operation on an undefined tensor");
  return *n;
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  std::vector<double> values(element_count(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != element_count(shape)) {
    throw ConfigError("tensor of shape " + to_string(shape) + " needs " +
                      std::to_string(element_count(shape)) + " values, got " +
                      std::to_string(values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("tensor of shape " + to_string(shape) + " has a non-finite value");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return require(node_).shape; }

std::size_t Tensor::extent(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ContractError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return require(node_).data.size(); }

std::span<const double> Tensor::values() const { return require(node_).data; }

std::span<double> Tensor::mutable_values() { return require(node_).data; }

double Tensor::item() const {
  const auto& d = require(node_).data;
  if (d.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return d[0];
}

bool Tensor::requires_grad() const { return require(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& n = require(node_);
  if (n.backward) throw ContractError("requires_grad can only be set on leaf tensors");
  n.requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !require(node_).backward; }

bool Tensor::has_grad() const { return !require(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& n = require(node_);
  if (n.grad.empty()) throw ContractError("tensor has no gradient");
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = require(node_);
  n.grad.assign(n.data.size(), 0.0);
}

void Tensor::clear_grad() { require(node_).grad.clear(); }

void Tensor::accumulate_grad(std::span<const double> delta) const {
  auto& n = require(node_);
  if (!n.requires_grad) return;
  if (delta.size() != n.data.size()) throw ContractError("gradient size mismatch for " + to_string(n.shape));
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  for (std::size_t i = 0; i < delta.size(); ++i) n.grad[i] += delta[i];
}

Tensor Tensor::detach() const {
  const auto& n = require(node_);
  return from(n.shape, n.data, false);
}

Tensor Tensor::clone() const {
  const auto& n = require(node_);
  return from(n.shape, n.data, n.requires_grad && !n.backward);
}

Tensor record(std::string_view op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
              BackwardFn backward_fn) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!GradMode::enabled()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& node = *TensorAccess::node(out);
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (const Tensor& t : inputs) node.parents.push_back(TensorAccess::node(t));
  node.backward = std::move(backward_fn);
  return out;
}

void backward(const Tensor& loss) {
  const auto& root = TensorAccess::node(loss);
  require(root);
  if (root->data.size() != 1) throw ContractError("backward() needs a scalar loss, got " + to_string(root->shape));
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reverse gives a valid topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(n->grad);
    for (const auto& p : n->parents) {
      for (double g : p->grad) {
        if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient");
      }
    }
  }
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_mode_enabled = previous_; }

BranchRecorder::BranchRecorder() : previous_(active_recorder) { active_recorder = this; }
BranchRecorder::~BranchRecorder() { active_recorder = previous_; }

bool branch_recording() { return active_recorder != nullptr; }

void note_branch(std::uint64_t decision) {
  if (!active_recorder) return;
  std::uint64_t& h = active_recorder->signature_;
  h ^= decision + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h *= 1099511628211ULL;
}

}  // namespace ccnet
