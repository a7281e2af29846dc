#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ccnet/chain.hpp"
#include "ccnet/error.hpp"
#include "ccnet/gradcheck.hpp"
#include "ccnet/objective.hpp"
#include "ccnet/ops.hpp"
#include "ccnet/parameter.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace ccnet {
namespace {

using testing::random_tensor;
using testing::random_vector;

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> random_probs(std::mt19937_64& rng, std::size_t n) {
  auto v = random_vector(rng, n, -3, 3);
  const std::size_t len = v.size();
  return vals(ops::softmax(Tensor::from({len}, v)));
}

TEST(StageWeights, Defaults) {
  EXPECT_EQ(default_stage_weights(1), (std::vector<double>{1.0}));
  const auto w = default_stage_weights(4);
  EXPECT_EQ(w, (std::vector<double>{0.005, 0.005, 0.005, 1.0}));
  EXPECT_THROW(default_stage_weights(0), ConfigError);
  const auto c = LossConfig::defaults(4, 8, 0.99);
  EXPECT_EQ(c.lambda, w);
  EXPECT_EQ(c.train_thresholds, std::vector<double>(3, 0.99));
  EXPECT_NO_THROW(c.validate());
}

TEST(LossConfigValidate, RejectsBadShapes) {
  auto c = LossConfig::defaults(4, 8, 0.5);
  c.lambda.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig::defaults(4, 8, 0.5);
  c.train_thresholds[1] = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainMask, ConfidentFirstStageDropsOut) {
  EXPECT_EQ(train_mask(std::vector<double>{0.9, 0.4}, std::vector<double>{0.5}), (std::vector<int>{1, 0}));
}

TEST(TrainMask, UnsureFirstStageStays) {
  EXPECT_EQ(train_mask(std::vector<double>{0.3, 0.4}, std::vector<double>{0.5}), (std::vector<int>{1, 1}));
}

TEST(TrainMask, BoundaryEqualsThresholdDropsOut) {
  EXPECT_EQ(train_mask(std::vector<double>{0.5, 0.4}, std::vector<double>{0.5}), (std::vector<int>{1, 0}));
}

TEST(TrainMask, PrefixProductAndNonIncreasing) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> p(4), r(3);
    for (auto& x : p) x = u(rng);
    for (auto& x : r) x = u(rng);
    const auto m = train_mask(p, r);
    EXPECT_EQ(m, testing::prefix_product_mask(p, r));
    for (std::size_t t = 1; t < m.size(); ++t) EXPECT_LE(m[t], m[t - 1]);
  }
}

TEST(TrainMask, UnitThresholdsKeepEverything) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> probs;
    for (int t = 0; t < 4; ++t) probs.push_back(random_probs(rng, 5));
    EXPECT_EQ(train_mask(probs, 2, std::vector<double>(3, 1.0)), std::vector<int>(4, 1));
  }
}

TEST(ClsLoss, PerfectPredictionIsZero) {
  LossConfig c = LossConfig::defaults(1, 2, 0.5);
  EXPECT_EQ(cls_loss(std::vector<std::vector<double>>{{0, 1, 0}}, 1, c), 0.0);
}

TEST(ClsLoss, InverseEProbabilityIsOne) {
  LossConfig c = LossConfig::defaults(1, 2, 0.5);
  const double p = std::exp(-1.0);
  EXPECT_NEAR(cls_loss(std::vector<std::vector<double>>{{1 - p, p, 0}}, 1, c), 1.0, 1e-15);
}

TEST(ClsLoss, ZeroProbabilityIsClamped) {
  LossConfig c = LossConfig::defaults(1, 2, 0.5);
  EXPECT_NEAR(cls_loss(std::vector<std::vector<double>>{{1, 0, 0}}, 1, c), -std::log(1e-12), 1e-9);
}

TEST(ClsLoss, MatchesHandSummedOracle) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    LossConfig c = LossConfig::defaults(4, 3, 0.0);
    for (auto& r : c.train_thresholds) r = u(rng);
    for (auto& l : c.lambda) l = u(rng);
    std::vector<std::vector<double>> probs;
    for (int t = 0; t < 4; ++t) probs.push_back(random_probs(rng, 4));
    const std::size_t k = trial % 4;
    double want = 0;
    bool alive = true;
    for (std::size_t t = 0; t < 4; ++t) {
      if (t > 0) alive = alive && probs[t - 1][k] < c.train_thresholds[t - 1];
      if (alive) want += -c.lambda[t] * std::log(probs[t][k]);
    }
    EXPECT_NEAR(cls_loss(probs, k, c), want, 1e-12);
  }
}

TEST(ClsLoss, SingleStageUnmaskedIsCrossEntropy) {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_probs(rng, 6);
    LossConfig c = LossConfig::defaults(1, 5, 1.0);
    EXPECT_DOUBLE_EQ(cls_loss(std::vector<std::vector<double>>{p}, 3, c), -std::log(p[3]));
  }
}

TEST(ClsLoss, TensorFormMatchesScalarForm) {
  std::mt19937_64 rng(45);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t R = 6, K1 = 4;
    LossConfig c = LossConfig::defaults(3, 3, 0.0);
    for (auto& r : c.train_thresholds) r = u(rng);
    std::vector<Tensor> probs;
    for (int t = 0; t < 3; ++t) probs.push_back(ops::softmax(random_tensor(rng, {R, K1}, -3, 3)));
    std::vector<std::size_t> labels;
    double want = 0;
    for (std::size_t r = 0; r < R; ++r) {
      labels.push_back(r % K1);
      std::vector<std::vector<double>> rows;
      for (const auto& p : probs) rows.emplace_back(p.values().begin() + r * K1, p.values().begin() + (r + 1) * K1);
      want += cls_loss(rows, labels.back(), c);
    }
    EXPECT_NEAR(cls_loss(probs, labels, c.lambda, c.train_thresholds, c.log_floor).item(), want, 1e-12);
  }
}

TEST(BboxEncode, IdentityAndShift) {
  const Box p{0, 0, 10, 10};
  EXPECT_EQ(bbox_encode(p, p), (Offsets{0, 0, 0, 0}));
  EXPECT_EQ(bbox_encode(p, {5, 0, 10, 10}), (Offsets{0.5, 0, 0, 0}));
  EXPECT_THROW(bbox_encode({0, 0, 0, 10}, p), ContractError);
  EXPECT_THROW(bbox_encode(p, {0, 0, 10, -1}), ContractError);
}

TEST(BboxDecode, ZeroOffsetsAndDoubling) {
  const Box p{3, 4, 10, 6};
  EXPECT_EQ(bbox_decode(p, {0, 0, 0, 0}), p);
  const Box d = bbox_decode(p, {0, 0, std::log(2.0), 0});
  EXPECT_DOUBLE_EQ(d.w, 20.0);
  EXPECT_EQ(d.h, 6.0);
  EXPECT_EQ(d.cx, 3.0);
}

TEST(BboxCodec, RoundTrip) {
  std::mt19937_64 rng(46);
  std::uniform_real_distribution<double> pos(-100, 100), size(0.5, 80);
  for (int trial = 0; trial < 1000; ++trial) {
    const Box p{pos(rng), pos(rng), size(rng), size(rng)}, g{pos(rng), pos(rng), size(rng), size(rng)};
    const Box back = bbox_decode(p, bbox_encode(p, g));
    EXPECT_NEAR(back.cx, g.cx, 1e-9);
    EXPECT_NEAR(back.cy, g.cy, 1e-9);
    EXPECT_NEAR(back.w, g.w, 1e-9);
    EXPECT_NEAR(back.h, g.h, 1e-9);
  }
}

TEST(LocLoss, Examples) {
  const BoxTarget fg{1, Offsets{0, 0, 0, 0}};
  EXPECT_EQ(loc_loss({3, 3, 3, 3}, BoxTarget{}), 0.0);
  EXPECT_EQ(loc_loss({0.5, 0, 0, 0}, fg), 0.125);
  EXPECT_EQ(loc_loss({2, 0, 0, 0}, fg), 1.5);
  EXPECT_EQ(loc_loss({-2, 0, 0, 0}, fg), 1.5);
}

TEST(LocLoss, ContinuousWithMatchingSlopesAtOne) {
  for (double at : {1.0, -1.0}) {
    const double h = 1e-7;
    EXPECT_NEAR(smooth_l1(at - 1e-12), smooth_l1(at + 1e-12), 1e-11);
    const double left = (smooth_l1(at) - smooth_l1(at - h)) / h;
    const double right = (smooth_l1(at + h) - smooth_l1(at)) / h;
    EXPECT_NEAR(left, right, 1e-6);
    EXPECT_NEAR(right, at, 1e-6);
  }
}

TEST(LocLoss, TensorFormUsesLabelSlot) {
  // Two classes: columns 0..3 are class 1, 4..7 class 2.
  Tensor deltas = Tensor::from({2, 8}, {9, 9, 9, 9, 0.5, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1}, true);
  const std::vector<BoxTarget> targets{{2, Offsets{0, 0, 0, 0}}, {}};
  Tensor l = loc_loss(deltas, targets);
  EXPECT_EQ(l.item(), 0.125);
  backward(l);
  const std::vector<double> g(deltas.grad().begin(), deltas.grad().end());
  EXPECT_EQ(g, (std::vector<double>{0, 0, 0, 0, 0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(TotalLoss, BackgroundSampleIsClassificationOnly) {
  LossConfig c = LossConfig::defaults(1, 2, 0.5);
  const std::vector<Tensor> probs{Tensor::from({1, 3}, {0.5, 0.25, 0.25})};
  const std::vector<BoxTarget> targets{BoxTarget{}};
  const auto r = total_loss(probs, Tensor::full({1, 8}, 7.0), targets, c);
  EXPECT_DOUBLE_EQ(r.report.total, -std::log(0.5));
  EXPECT_EQ(r.report.loc, 0.0);
}

TEST(TotalLoss, PerfectPredictionIsZero) {
  LossConfig c = LossConfig::defaults(2, 2, 1.0);
  const std::vector<Tensor> probs{Tensor::from({1, 3}, {0, 1, 0}), Tensor::from({1, 3}, {0, 1, 0})};
  const std::vector<BoxTarget> targets{{1, Offsets{0.1, 0.2, 0.3, 0.4}}};
  const auto r = total_loss(probs, Tensor::from({1, 8}, {0.1, 0.2, 0.3, 0.4, 5, 5, 5, 5}), targets, c);
  EXPECT_EQ(r.report.total, 0.0);
}

TEST(TotalLoss, EqualsMeanOfComponents) {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t R = 7, K = 3, T = 4;
    LossConfig c = LossConfig::defaults(T, K, 0.0);
    for (auto& r : c.train_thresholds) r = u(rng);
    std::vector<Tensor> probs;
    for (std::size_t t = 0; t < T; ++t) probs.push_back(ops::softmax(random_tensor(rng, {R, K + 1}, -3, 3)));
    Tensor deltas = random_tensor(rng, {R, 4 * K}, -2, 2);
    std::vector<BoxTarget> targets;
    double want = 0;
    std::vector<std::size_t> counts(T, 0);
    for (std::size_t r = 0; r < R; ++r) {
      BoxTarget tg;
      tg.label = r % (K + 1);
      if (tg.label > 0) tg.offsets = Offsets{u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5};
      targets.push_back(tg);
      std::vector<std::vector<double>> rows;
      for (const auto& p : probs) rows.emplace_back(p.values().begin() + r * (K + 1), p.values().begin() + (r + 1) * (K + 1));
      want += cls_loss(rows, tg.label, c);
      const auto m = train_mask(rows, tg.label, c.train_thresholds);
      for (std::size_t t = 0; t < T; ++t) counts[t] += static_cast<std::size_t>(m[t]);
      if (tg.label > 0) {
        Offsets pred;
        for (std::size_t i = 0; i < 4; ++i) pred[i] = deltas[r * 4 * K + (tg.label - 1) * 4 + i];
        want += loc_loss(pred, tg);
      }
    }
    const auto res = total_loss(probs, deltas, targets, c);
    EXPECT_NEAR(res.report.total, want / R, 1e-12);
    EXPECT_EQ(res.report.mask_counts, counts);
    double parts = res.report.loc;
    for (double s : res.report.cls_per_stage) parts += s;
    EXPECT_NEAR(parts, res.report.total, 1e-12);
  }
}

TEST(TotalLoss, FewerStagesUseDefaultWeights) {
  LossConfig c = LossConfig::defaults(4, 2, 0.5);
  c.lambda = {9, 9, 9, 9};
  const std::vector<Tensor> probs{Tensor::from({1, 3}, {0.5, 0.25, 0.25})};
  const auto r = total_loss(probs, Tensor::zeros({1, 8}), std::vector<BoxTarget>{BoxTarget{}}, c);
  EXPECT_DOUBLE_EQ(r.report.total, -std::log(0.5));
}

TEST(TotalLoss, RejectsInconsistentTargets) {
  LossConfig c = LossConfig::defaults(1, 2, 0.5);
  const std::vector<Tensor> probs{Tensor::from({1, 3}, {0.5, 0.25, 0.25})};
  EXPECT_THROW(total_loss(probs, Tensor::zeros({1, 8}), std::vector<BoxTarget>{{1, std::nullopt}}, c), ContractError);
  EXPECT_THROW(total_loss(probs, Tensor::zeros({1, 8}), std::vector<BoxTarget>{{3, Offsets{}}}, c), ConfigError);
  EXPECT_THROW(total_loss(probs, Tensor::zeros({1, 8}), std::vector<BoxTarget>{}, c), ConfigError);
}

TEST(LossReport, JsonShape) {
  LossReport r;
  r.step = 3;
  r.cls_per_stage = {0.5, 0.25};
  r.mask_counts = {4, 2};
  r.loc = 0.125;
  r.total = 0.875;
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["step"], 3);
  EXPECT_EQ(j["mask_counts"][1], 2);
  EXPECT_EQ(j["cls_per_stage"][0], 0.5);
  EXPECT_EQ(j["loc"], 0.125);
  EXPECT_EQ(j["total"], 0.875);
}

// One sample, two stages. Stage 1 is confident about the label, so u_2 = 0
// and a plain SGD step must leave the stage-2 classifier untouched.
TEST(Masking, MaskedStageClassifierReceivesNoUpdate) {
  std::mt19937_64 rng(48);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterStore store;
    ChainParams params = ChainParams::create(store, 2, 4, 2, static_cast<std::uint64_t>(trial), 0.3);
    auto bias = params.classifiers[0].bias.mutable_values();
    bias[1] = 8.0;
    Tensor o1 = random_tensor(rng, {1, 4}), o2 = random_tensor(rng, {1, 4});
    const std::vector<Tensor> o{o1, o2};
    const auto w2 = vals(params.classifiers[1].weight), b2 = vals(params.classifiers[1].bias);
    const auto w1 = vals(params.classifiers[0].weight);

    LossConfig c = LossConfig::defaults(2, 2, 0.5);
    const auto out = chain_forward(o, params, {});
    const std::vector<BoxTarget> targets{{1, Offsets{0, 0, 0, 0}}};
    const auto res = total_loss(out.probs, Tensor::zeros({1, 8}), targets, c);
    ASSERT_EQ(res.report.mask_counts, (std::vector<std::size_t>{1, 0}));
    store.zero_grad();
    backward(res.total);
    sgd_step(store.all(), 0.5, 0.0);

    EXPECT_EQ(vals(params.classifiers[1].weight), w2);
    EXPECT_EQ(vals(params.classifiers[1].bias), b2);
    EXPECT_NE(vals(params.classifiers[0].weight), w1);
  }
}

TEST(Masking, UnmaskedStageClassifierDoesUpdate) {
  std::mt19937_64 rng(49);
  ParameterStore store;
  ChainParams params = ChainParams::create(store, 2, 4, 2, 3, 0.3);
  const std::vector<Tensor> o{random_tensor(rng, {1, 4}), random_tensor(rng, {1, 4})};
  const auto w2 = vals(params.classifiers[1].weight);
  LossConfig c = LossConfig::defaults(2, 2, 0.99);
  const auto out = chain_forward(o, params, {});
  const auto res = total_loss(out.probs, Tensor::zeros({1, 8}), std::vector<BoxTarget>{{1, Offsets{}}}, c);
  ASSERT_EQ(res.report.mask_counts, (std::vector<std::size_t>{1, 1}));
  store.zero_grad();
  backward(res.total);
  sgd_step(store.all(), 0.5, 0.0);
  EXPECT_NE(vals(params.classifiers[1].weight), w2);
}

TEST(TotalLossGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t R = 4, K = 2;
    std::vector<Tensor> inputs{random_tensor(rng, {R, K + 1}, -2, 2, true), random_tensor(rng, {R, K + 1}, -2, 2, true),
                               random_tensor(rng, {R, 4 * K}, -0.4, 0.4, true)};
    const std::vector<BoxTarget> targets{{0, {}}, {1, Offsets{0.1, -0.2, 0.05, 0}}, {2, Offsets{0, 0, 0, 0}}, {0, {}}};
    LossConfig c = LossConfig::defaults(2, K, 0.6);
    auto fragment = [&] {
      const std::vector<Tensor> probs{ops::softmax(inputs[0]), ops::softmax(inputs[1])};
      return total_loss(probs, inputs[2], targets, c).total;
    };
    const auto rep = finite_diff_check(fragment, inputs, 1e-4);
    EXPECT_TRUE(rep.passed()) << rep.worst << " " << rep.max_rel_error;
  }
}

}  // namespace
}  // namespace ccnet
