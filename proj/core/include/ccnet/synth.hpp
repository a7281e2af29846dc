#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ccnet/box.hpp"
#include "ccnet/tensor.hpp"

namespace ccnet {

struct SceneObject {
  Box box;
  std::size_t label = 1;  // 1..K
};

struct SynthScene {
  Tensor image;  // [3,H,W], values in [0,1]
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;
};

// Class c (1-based) is drawn as shape (c-1) % 4 in color (c-1) / 4, so
// classes differ by shape, by color, or both.
struct SynthConfig {
  std::size_t num_classes = 8;
  std::size_t image_size = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double min_object_size = 14.0;
  double max_object_size = 30.0;
  double noise_std = 0.08;
  double color_jitter = 0.12;
  std::size_t clutter = 6;  // desaturated distractor strokes per image

  void validate() const;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

inline constexpr std::size_t kMaxSynthClasses = 24;

std::vector<SynthScene> synth_dataset(std::uint64_t seed, std::size_t n_images, const SynthConfig& config);
std::vector<SynthScene> synth_dataset(std::uint64_t seed, std::size_t n_images, std::size_t num_classes,
                                      std::size_t image_size);

// Stacks the selected scenes into a [N,3,H,W] network input, centered at 0.
Tensor batch_images(std::span<const SynthScene> scenes, std::span<const std::size_t> indices);

// Directory layout: index.json plus one little-endian binary tensor per image
// (u32 rank, u64 extents, f64 values).
void save_dataset(const std::filesystem::path& dir, std::span<const SynthScene> scenes, std::uint64_t seed,
                  const SynthConfig& config);
std::vector<SynthScene> load_dataset(const std::filesystem::path& dir);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace ccnet
