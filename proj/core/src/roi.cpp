#include "ccnet/roi.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ccnet/error.hpp"
#include "ccnet/ops.hpp"

namespace ccnet {

std::vector<StageSpec> default_stage_specs() { return {{14, 0.0}, {22, 0.5}, {16, 0.8}, {14, 1.7}}; }

Box pad_box(const Box& box, double context, double image_w, double image_h) {
  if (!box.valid()) throw ContractError("pad_box: box must have positive width and height");
  if (context < 0.0) throw ContractError("pad_box: context padding must be nonnegative");
  if (box.cx < 0.0 || box.cx > image_w || box.cy < 0.0 || box.cy > image_h) {
    throw ContractError("pad_box: box center lies outside the image");
  }
  const double half_w = 0.5 * (1.0 + context) * box.w;
  const double half_h = 0.5 * (1.0 + context) * box.h;
  return Box::from_corners(std::max(0.0, box.cx - half_w), std::max(0.0, box.cy - half_h),
                           std::min(image_w, box.cx + half_w), std::min(image_h, box.cy + half_h));
}

CellRange project_extent(double lo, double hi, double center, double stride, std::size_t cells) {
  const double n = static_cast<double>(cells);
  const double begin = std::clamp(std::floor(lo / stride), 0.0, n);
  const double end = std::clamp(std::ceil(hi / stride), 0.0, n);
  if (end > begin) return {static_cast<std::size_t>(begin), static_cast<std::size_t>(end)};
  const auto nearest = static_cast<std::size_t>(std::clamp(std::floor(center / stride), 0.0, n - 1.0));
  return {nearest, nearest + 1};
}

CellRange pooling_bin(const CellRange& range, std::size_t i, std::size_t bins) {
  const std::size_t len = range.size();
  return {range.begin + (i * len) / bins, range.begin + ((i + 1) * len + bins - 1) / bins};
}

Tensor roi_pool(const Tensor& featmap, const Box& box, std::size_t out_size, double stride) {
  if (featmap.rank() != 3) throw ConfigError("roi_pool: feature map must be [C,H,W], got " + to_string(featmap.shape()));
  const RoiRef roi{0, box};
  Tensor batched = ops::reshape(featmap, {1, featmap.extent(0), featmap.extent(1), featmap.extent(2)});
  return ops::reshape(roi_pool(batched, std::span(&roi, 1), out_size, stride), {featmap.extent(0), out_size, out_size});
}

Tensor roi_pool(const Tensor& featmaps, std::span<const RoiRef> rois, std::size_t out_size, double stride) {
  if (featmaps.rank() != 4) throw ConfigError("roi_pool: feature maps must be [N,C,H,W], got " + to_string(featmaps.shape()));
  if (out_size == 0) throw ConfigError("roi_pool: output size must be positive");
  if (rois.empty()) throw ConfigError("roi_pool: no RoIs");
  if (!(stride > 0.0)) throw ConfigError("roi_pool: stride must be positive");
  const std::size_t n = featmaps.extent(0), c = featmaps.extent(1), h = featmaps.extent(2), w = featmaps.extent(3);
  const std::size_t bins = out_size * out_size;
  auto fv = featmaps.values();
  std::vector<double> out(rois.size() * c * bins);
  std::vector<std::size_t> argmax(out.size());
  const bool rec = branch_recording();

  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoiRef& roi = rois[r];
    if (roi.image >= n) throw ConfigError("roi_pool: RoI image index out of range");
    const CellRange xs = project_extent(roi.box.x1(), roi.box.x2(), roi.box.cx, stride, w);
    const CellRange ys = project_extent(roi.box.y1(), roi.box.y2(), roi.box.cy, stride, h);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t plane = (roi.image * c + ch) * h * w;
      for (std::size_t by = 0; by < out_size; ++by) {
        const CellRange ry = pooling_bin(ys, by, out_size);
        for (std::size_t bx = 0; bx < out_size; ++bx) {
          const CellRange rx = pooling_bin(xs, bx, out_size);
          std::size_t best = plane + ry.begin * w + rx.begin;
          for (std::size_t y = ry.begin; y < ry.end; ++y) {
            for (std::size_t x = rx.begin; x < rx.end; ++x) {
              const std::size_t idx = plane + y * w + x;
              if (fv[idx] > fv[best]) best = idx;
            }
          }
          const std::size_t o = ((r * c + ch) * out_size + by) * out_size + bx;
          out[o] = fv[best];
          argmax[o] = best;
          if (rec) note_branch(best);
        }
      }
    }
  }

  return record("roi_pool", {rois.size(), c, out_size, out_size}, std::move(out), {featmaps},
                [featmaps, argmax = std::move(argmax)](std::span<const double> gout) {
                  std::vector<double> dx(featmaps.numel(), 0.0);
                  for (std::size_t o = 0; o < gout.size(); ++o) dx[argmax[o]] += gout[o];
                  featmaps.accumulate_grad(dx);
                });
}

Tensor stage_head(const Tensor& pooled, const StageHead& head, std::size_t expected_size) {
  if (pooled.rank() != 4 || pooled.extent(2) != expected_size || pooled.extent(3) != expected_size) {
    throw ConfigError("stage_head: pooled input " + to_string(pooled.shape()) + " does not match pooled size " +
                      std::to_string(expected_size));
  }
  if (pooled.extent(1) != head.weight.extent(1)) {
    throw ConfigError("stage_head: pooled input has " + std::to_string(pooled.extent(1)) + " channels, head expects " +
                      std::to_string(head.weight.extent(1)));
  }
  return ops::global_avg_pool(ops::relu(ops::conv2d(pooled, head.weight, head.bias, 1)));
}

namespace {

std::vector<double> he_normal(std::size_t count, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(count);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

std::vector<StageHead> make_stage_heads(ParameterStore& store, std::size_t stages, std::size_t in_channels,
                                        std::size_t out_channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Shape wshape{out_channels, in_channels, 3, 3};
  const std::vector<double> shared = he_normal(element_count(wshape), in_channels * 9, rng);
  std::vector<StageHead> heads;
  for (std::size_t t = 1; t <= stages; ++t) {
    const std::string prefix = "stage" + std::to_string(t) + ".conv.";
    StageHead head;
    head.weight = store.add(prefix + "weight", Tensor::from(wshape, shared));
    head.bias = store.add(prefix + "bias", Tensor::zeros({out_channels}), false);
    heads.push_back(std::move(head));
  }
  return heads;
}

Backbone::Backbone(ParameterStore& store, std::size_t in_channels, std::span<const std::size_t> widths,
                   std::uint64_t seed) {
  if (widths.size() != 4) throw ConfigError("backbone needs exactly 4 layer widths");
  std::mt19937_64 rng(seed);
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string prefix = "backbone.conv" + std::to_string(i + 1) + ".";
    StageHead layer;
    layer.weight = store.add(prefix + "weight", Tensor::from({widths[i], cin, 3, 3}, he_normal(widths[i] * cin * 9, cin * 9, rng)));
    layer.bias = store.add(prefix + "bias", Tensor::zeros({widths[i]}), false);
    layers_.push_back(std::move(layer));
    cin = widths[i];
  }
}

Tensor Backbone::forward(const Tensor& images) const {
  Tensor x = images;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = ops::relu(ops::conv2d(x, layers_[i].weight, layers_[i].bias, 1));
    if (i + 1 < layers_.size()) x = ops::max_pool2d(x, 2);
  }
  return x;
}

Tensor stage_feature(const Tensor& featmaps, std::span<const RoiRef> rois, const StageSpec& stage,
                     const StageHead& head, double image_w, double image_h, double stride) {
  std::vector<RoiRef> padded(rois.begin(), rois.end());
  for (auto& roi : padded) roi.box = pad_box(roi.box, stage.context, image_w, image_h);
  return stage_head(roi_pool(featmaps, padded, stage.pooled_size, stride), head, stage.pooled_size);
}

std::vector<Tensor> stage_features(const Tensor& featmaps, std::span<const RoiRef> rois,
                                   std::span<const StageSpec> stages, std::span<const StageHead> heads,
                                   double image_w, double image_h, double stride) {
  if (heads.size() < stages.size()) throw ConfigError("stage_features: fewer heads than stages");
  std::vector<Tensor> out;
  out.reserve(stages.size());
  for (std::size_t t = 0; t < stages.size(); ++t) {
    out.push_back(stage_feature(featmaps, rois, stages[t], heads[t], image_w, image_h, stride));
  }
  return out;
}

}  // namespace ccnet
