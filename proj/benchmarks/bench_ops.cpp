#include <benchmark/benchmark.h>

#include <random>

#include "ccnet/model.hpp"
#include "ccnet/objective.hpp"
#include "ccnet/ops.hpp"
#include "ccnet/proposals.hpp"
#include "ccnet/roi.hpp"
#include "ccnet/synth.hpp"

namespace {

using namespace ccnet;

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool grad = false) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Conv2d(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const auto ch = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(1);
  NoGradGuard guard;
  Tensor x = random_tensor(rng, {2, ch, size, size});
  Tensor w = random_tensor(rng, {ch, ch, 3, 3});
  Tensor b = random_tensor(rng, {ch});
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1));
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * 2 * ch * ch * 9 * size * size * 1e-9,
                                                 benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2d)->Args({22, 32})->Args({48, 16})->Args({12, 64})->Unit(benchmark::kMicrosecond);

void BM_RoiPool(benchmark::State& state) {
  const auto rois = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  NoGradGuard guard;
  Tensor maps = random_tensor(rng, {2, 32, 12, 12});
  std::uniform_real_distribution<double> u(8, 88);
  std::vector<RoiRef> refs;
  for (std::size_t i = 0; i < rois; ++i) refs.push_back({i % 2, Box{u(rng), u(rng), 20, 24}});
  for (auto _ : state) benchmark::DoNotOptimize(roi_pool(maps, refs, 14, 8.0));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * rois));
}
BENCHMARK(BM_RoiPool)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

// One full training step of the default model on a two-image batch.
void BM_ForwardBackward(benchmark::State& state) {
  const auto mode = static_cast<Mode>(state.range(0));
  ModelConfig cfg;
  Model model(cfg, 3);
  SynthConfig data;
  data.image_size = 96;
  data.min_object_size = 16;
  data.max_object_size = 40;
  const auto scenes = synth_dataset(4, 2, data);
  const std::vector<std::size_t> idx{0, 1};
  const Tensor images = batch_images(scenes, idx);
  std::vector<RoiRef> rois;
  std::vector<BoxTarget> targets;
  for (std::size_t i = 0; i < 2; ++i) {
    for (const auto& p : gen_proposals(scenes[i], 64, 0.25, 0.75, 5)) {
      rois.push_back({i, p.box});
      targets.push_back(p.target);
    }
  }
  const auto loss = LossConfig::defaults(cfg.stages.size(), cfg.num_classes, 0.99);
  for (auto _ : state) {
    auto fwd = model.forward(images, rois, mode);
    auto res = total_loss(fwd.chain.probs, fwd.box_deltas, targets, loss);
    model.parameters().zero_grad();
    backward(res.total);
    benchmark::DoNotOptimize(res.report.total);
  }
  state.SetLabel(std::string(to_string(mode)));
}
BENCHMARK(BM_ForwardBackward)
    ->Arg(static_cast<int>(Mode::single_stage_baseline))
    ->Arg(static_cast<int>(Mode::chained_cascade))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
