#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ccnet/tensor.hpp"

namespace ccnet {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool decay = true;  // whether weight decay applies
};

// Ordered, name-unique collection of trainable tensors.
class ParameterStore {
 public:
  // Registers a leaf tensor and marks it as requiring gradients. Returns the
  // stored handle (aliasing `tensor`). Throws ConfigError on a duplicate name.
  Tensor add(std::string name, Tensor tensor, bool decay = true);

  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<Parameter> all() { return params_; }
  std::span<const Parameter> all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  // Deep copy with fresh storage.
  ParameterStore clone() const;

 private:
  std::vector<Parameter> params_;
};

// p <- p - lr * (grad + weight_decay * p) (the decay term only for
// decay-eligible parameters), then clears every gradient.
// Throws ContractError if a parameter has no gradient buffer.
void sgd_step(std::span<Parameter> params, double lr, double weight_decay);

// Flat little-endian binary: u32 format version, u64 parameter count, then per
// parameter u32 name length, name bytes, u32 rank, u64 extents, f64 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
std::vector<std::byte> serialize_checkpoint(const ParameterStore& store);

// Copies values into `store`; every stored parameter must be present in the
// file with the same shape.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& path);
void deserialize_checkpoint(ParameterStore& store, std::span<const std::byte> bytes);

}  // namespace ccnet
