#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccnet/box.hpp"
#include "ccnet/parameter.hpp"
#include "ccnet/tensor.hpp"

namespace ccnet {

// Per-stage RoI geometry: pooled spatial side and context padding ratio c.
struct StageSpec {
  std::size_t pooled_size = 14;
  double context = 0.0;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

// Four stages: pooled 14/22/16/14, context 0/0.5/0.8/1.7.
std::vector<StageSpec> default_stage_specs();

// Enlarges `box` about its center to (1+c)W x (1+c)H, then clamps each edge
// independently to [0,image_w] x [0,image_h]. The center must lie inside the
// image.
Box pad_box(const Box& box, double context, double image_w, double image_h);

// Half-open integer cell range [begin, end) along one feature-map axis.
struct CellRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const CellRange&, const CellRange&) = default;
};

// Projection of [lo, hi) image coordinates onto `cells` feature cells at the
// given stride: floor(lo/stride) .. ceil(hi/stride), clamped to the map. An
// empty projection collapses to the single cell nearest `center`.
CellRange project_extent(double lo, double hi, double center, double stride, std::size_t cells);

// Bin `i` of `bins` over a range: [begin + floor(i*L/P), begin + ceil((i+1)*L/P)).
CellRange pooling_bin(const CellRange& range, std::size_t i, std::size_t bins);

struct RoiRef {
  std::size_t image = 0;  // index into the leading axis of the feature maps
  Box box;
};

// Max pooling of one RoI over a [C,H,W] map -> [C,out,out].
Tensor roi_pool(const Tensor& featmap, const Box& box, std::size_t out_size, double stride);

// Batched form over [N,C,H,W] maps -> [R,C,out,out]; gradients route to the
// argmax cell of each bin.
Tensor roi_pool(const Tensor& featmaps, std::span<const RoiRef> rois, std::size_t out_size, double stride);

// One conv(3x3, pad 1) + relu block followed by global average pooling.
struct StageHead {
  Tensor weight;  // [C1, Cin, 3, 3]
  Tensor bias;    // [C1]
};

// pooled [R,Cin,s,s] with s == expected_size -> o_t [R,C1].
Tensor stage_head(const Tensor& pooled, const StageHead& head, std::size_t expected_size);

// Registers T heads named "stage<t>.conv.{weight,bias}" that all start from
// one shared He-normal draw.
std::vector<StageHead> make_stage_heads(ParameterStore& store, std::size_t stages, std::size_t in_channels,
                                        std::size_t out_channels, std::uint64_t seed);

// Four conv(3x3)+relu layers with 2x2 max pooling after the first three:
// accumulated stride 8.
class Backbone {
 public:
  static constexpr double kStride = 8.0;

  Backbone() = default;
  Backbone(ParameterStore& store, std::size_t in_channels, std::span<const std::size_t> widths, std::uint64_t seed);

  // images [N,Cin,H,W] -> [N,Cout,H/8,W/8]
  Tensor forward(const Tensor& images) const;
  std::size_t out_channels() const { return layers_.empty() ? 0 : layers_.back().bias.extent(0); }

 private:
  std::vector<StageHead> layers_;
};

// o_t for stages [0, stages.size()): pad each RoI by the stage context, pool at
// the stage resolution, then run the stage head.
std::vector<Tensor> stage_features(const Tensor& featmaps, std::span<const RoiRef> rois,
                                   std::span<const StageSpec> stages, std::span<const StageHead> heads,
                                   double image_w, double image_h, double stride);

// Single stage form of the above, used by the early-exit evaluator.
Tensor stage_feature(const Tensor& featmaps, std::span<const RoiRef> rois, const StageSpec& stage,
                     const StageHead& head, double image_w, double image_h, double stride);

}  // namespace ccnet
