// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance --config configs/benchmark.yaml --work <dir> [--only 1,2,...]
//
// Criteria 4-6 train and evaluate the full benchmark (about an hour on one
// core). Set CCNET_ACCEPT_REUSE=1 to keep finished runs from a previous
// invocation instead of starting from a clean work directory.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ccnet/calibrate.hpp"
#include "ccnet/chain.hpp"
#include "ccnet/error.hpp"
#include "ccnet/evaluate.hpp"
#include "ccnet/gradcheck.hpp"
#include "ccnet/model.hpp"
#include "ccnet/objective.hpp"
#include "ccnet/ops.hpp"
#include "ccnet/random.hpp"
#include "ccnet/roi.hpp"
#include "ccnet/train.hpp"
#include "commands.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace ccnet;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Silences the JSON the commands print to stdout.
class MuteStdout {
 public:
  MuteStdout() : old_(std::cout.rdbuf(sink_.rdbuf())) {}
  ~MuteStdout() { std::cout.rdbuf(old_); }
  MuteStdout(const MuteStdout&) = delete;
  MuteStdout& operator=(const MuteStdout&) = delete;

 private:
  std::ostringstream sink_;
  std::streambuf* old_;
};

// ---- 1: gradient of the whole head ----

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_where;
  std::size_t checked = 0, skipped = 0, failures = 0;
  for (std::uint64_t cfg = 0; cfg < 50; ++cfg) {
    std::mt19937_64 rng(derive_seed(0x6AD, cfg));
    auto pick = [&](std::size_t lo, std::size_t hi) {
      return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    const std::size_t N = pick(1, 2), Cin = pick(2, 3), side = pick(4, 6), C1 = pick(3, 5), K = pick(2, 3);
    const std::size_t T = pick(1, 4), R = pick(2, 4);
    const double stride = 4.0, extent = stride * static_cast<double>(side);

    std::vector<StageSpec> specs;
    for (std::size_t t = 0; t < T; ++t) {
      specs.push_back({pick(2, 4), std::uniform_real_distribution<double>(0.0, 1.7)(rng)});
    }
    std::vector<Tensor> inputs;
    inputs.push_back(testing::random_tensor(rng, {N, Cin, side, side}));
    std::vector<StageHead> heads;
    for (std::size_t t = 0; t < T; ++t) {
      inputs.push_back(testing::random_tensor(rng, {C1, Cin, 3, 3}, -0.5, 0.5));
      inputs.push_back(testing::random_tensor(rng, {C1}, 0.0, 0.3));
    }
    ChainParams chain;
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) chain.a.push_back(testing::random_tensor(rng, {C1}, 0.5, 1.5));
      chain.b.push_back(testing::random_tensor(rng, {K + 1}, 0.5, 1.5));
      chain.classifiers.push_back({testing::random_tensor(rng, {K + 1, C1}), testing::random_tensor(rng, {K + 1})});
    }
    for (auto& a : chain.a) inputs.push_back(a);
    for (auto& b : chain.b) inputs.push_back(b);
    for (auto& c : chain.classifiers) {
      inputs.push_back(c.weight);
      inputs.push_back(c.bias);
    }
    inputs.push_back(testing::random_tensor(rng, {4 * K, C1}, -0.3, 0.3));
    inputs.push_back(testing::random_tensor(rng, {4 * K}, -0.1, 0.1));
    for (auto& x : inputs) x.set_requires_grad(true);
    for (std::size_t t = 0; t < T; ++t) heads.push_back({inputs[1 + 2 * t], inputs[2 + 2 * t]});

    std::vector<RoiRef> rois;
    std::vector<BoxTarget> targets;
    std::uniform_real_distribution<double> pos(0.1 * extent, 0.9 * extent), size(0.2 * extent, 0.6 * extent);
    for (std::size_t r = 0; r < R; ++r) {
      rois.push_back({r % N, Box{pos(rng), pos(rng), size(rng), size(rng)}});
      BoxTarget tg;
      tg.label = pick(0, K);
      if (tg.label > 0) {
        std::uniform_real_distribution<double> off(-0.5, 0.5);
        tg.offsets = Offsets{off(rng), off(rng), off(rng), off(rng)};
      }
      targets.push_back(tg);
    }
    LossConfig loss = LossConfig::defaults(T, K, 0.0);
    for (auto& r : loss.train_thresholds) r = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
    const bool chained_scores = cfg % 2 == 0;
    const ChainOptions opt{true, chained_scores ? ScoreChaining::chained : ScoreChaining::conventional,
                           Normalization::softmax};

    auto fragment = [&] {
      const auto o = stage_features(inputs[0], rois, specs, heads, extent, extent, stride);
      const auto out = chain_forward(o, chain, opt);
      const Tensor deltas = ops::linear(out.f.back(), inputs[inputs.size() - 2], inputs.back());
      return total_loss(out.probs, deltas, targets, loss).total;
    };
    const auto rep = finite_diff_check(fragment, inputs, 1e-4);
    checked += rep.checked;
    skipped += rep.skipped_nonsmooth;
    if (!rep.passed()) ++failures;
    if (rep.max_rel_error > worst) {
      worst = rep.max_rel_error;
      worst_where = "config " + std::to_string(cfg) + " " + rep.worst;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && secs < 300.0 && checked > 0;
  o.detail = "50 configs, " + std::to_string(checked) + " coords checked, " + std::to_string(skipped) +
             " kink-straddling skipped, max rel err " + fmt(worst * 1e6, 3) + "e-6 (" + worst_where + "), " +
             fmt(secs, 1) + " s";
  return o;
}

// ---- 2: oracle equivalences ----

Outcome oracle_equivalences() {
  std::mt19937_64 rng(0x0AC1E);
  const std::size_t n = 1000;
  std::size_t feat_bad = 0, score_bad = 0, mask_bad = 0, map_bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t C = 1 + i % 6, T = 1 + i % 4;
    std::vector<std::vector<double>> o(T), a(T > 1 ? T - 1 : 0);
    std::vector<Tensor> ot, at;
    for (std::size_t t = 0; t < T; ++t) {
      o[t] = testing::random_vector(rng, C);
      ot.push_back(Tensor::from({C}, o[t]));
      if (t + 1 < T) {
        a[t] = testing::random_vector(rng, C);
        at.push_back(Tensor::from({C}, a[t]));
      }
    }
    const auto f = chain_features(ot, at);
    for (std::size_t t = 1; t <= T; ++t) feat_bad += vals(f[t - 1]) != testing::direct_feature_sum(o, a, t);

    std::vector<Tensor> raw, b;
    std::vector<double> acc(C + 1, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const auto r = testing::random_vector(rng, C + 1), s = testing::random_vector(rng, C + 1);
      raw.push_back(Tensor::from({C + 1}, r));
      b.push_back(Tensor::from({C + 1}, s));
      for (std::size_t k = 0; k <= C; ++k) acc[k] = t == 0 ? s[k] * r[k] : acc[k] + s[k] * r[k];
    }
    score_bad += vals(chain_scores(raw, b)) != acc;

    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> p(T), thr(T - 1);
    for (auto& x : p) x = u(rng);
    for (auto& x : thr) x = u(rng);
    mask_bad += train_mask(p, thr) != testing::prefix_product_mask(p, thr);

    std::vector<GroundTruth> g;
    std::vector<Detection> d;
    const std::size_t ng = 1 + rng() % 6, nd = rng() % 12;
    for (std::size_t j = 0; j < ng; ++j) g.push_back({rng() % 2, 1 + rng() % 3, testing::random_grid_box(rng, 4.0)});
    for (std::size_t j = 0; j < nd; ++j) {
      d.push_back({rng() % 2, 1 + rng() % 3, 0.1 * static_cast<double>(rng() % 10), testing::random_grid_box(rng, 4.0)});
    }
    const auto got = map_eval(d, g, 3);
    const auto want = testing::brute_force_ap(d, g, 3, 0.5);
    for (std::size_t k = 0; k < 3; ++k) map_bad += got.ap[k] != want[k];
  }
  Outcome out;
  out.pass = feat_bad + score_bad + mask_bad + map_bad == 0;
  out.detail = std::to_string(n) + " instances each; mismatches: chain_features " + std::to_string(feat_bad) +
               ", chain_scores " + std::to_string(score_bad) + ", train_mask " + std::to_string(mask_bad) +
               ", map_eval " + std::to_string(map_bad);
  return out;
}

// ---- 3: one stage degenerates to a plain softmax head ----

Outcome degeneration() {
  std::size_t mismatches = 0, compared = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig cfg;
    cfg.backbone_widths = {4, 8, 8, 8};
    cfg.feature_dim = 8;
    cfg.num_classes = 4;
    cfg.stages = {{6, 0.3}};
    cfg.classifier_std = 0.5;
    Model model(cfg, seed);
    std::mt19937_64 rng(seed);
    const Tensor images = testing::random_tensor(rng, {2, 3, 48, 48}, -0.5, 0.5);
    std::vector<RoiRef> rois;
    std::uniform_real_distribution<double> pos(8, 40), size(6, 24);
    for (std::size_t r = 0; r < 16; ++r) rois.push_back({r % 2, Box{pos(rng), pos(rng), size(rng), size(rng)}});
    NoGradGuard guard;
    const auto fwd = model.forward(images, rois, Mode::chained_cascade);
    const auto& cls = model.chain().classifiers[0];
    const Tensor plain = ops::softmax(ops::linear(fwd.o[0], cls.weight, cls.bias));
    ++compared;
    mismatches += vals(fwd.chain.probs[0]) != vals(plain);
    // The per-RoI inference path agrees as well.
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const std::size_t C1 = cfg.feature_dim;
      std::vector<double> o(fwd.o[0].values().begin() + r * C1, fwd.o[0].values().begin() + (r + 1) * C1);
      const auto trace = cascade_infer(std::vector<std::vector<double>>{o}, model.chain(), chain_options(Mode::chained_cascade));
      const std::size_t K1 = cfg.num_classes + 1;
      const std::vector<double> row(plain.values().begin() + r * K1, plain.values().begin() + (r + 1) * K1);
      ++compared;
      mismatches += trace.stages[0].probs != row;
    }
  }
  Outcome out;
  out.pass = mismatches == 0;
  out.detail = std::to_string(compared) + " comparisons (batched and per-RoI), " + std::to_string(mismatches) +
               " not bit-identical";
  return out;
}

// ---- 7: masking ----

Outcome masking() {
  std::size_t diff_cases = 0, diff_bad = 0, grad_bad = 0, sweep_bad = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig cfg;
    cfg.backbone_widths = {4, 8, 8, 8};
    cfg.feature_dim = 8;
    cfg.num_classes = 3;
    cfg.stages = {{4, 0.0}, {5, 0.5}, {4, 0.8}, {3, 1.7}};
    Model model(cfg, seed);
    std::mt19937_64 rng(seed + 100);
    const Tensor images = testing::random_tensor(rng, {1, 3, 32, 32}, -0.5, 0.5);
    const std::size_t label = 1 + seed % 3;
    // A stage-1 classifier confident in the label masks stages 2..4.
    model.chain().classifiers[0].bias.mutable_values()[label] = 12.0;
    const std::vector<RoiRef> rois{{0, Box{16, 16, 12, 12}}};
    const std::vector<BoxTarget> targets{{label, Offsets{0.1, -0.1, 0.05, 0.0}}};
    const auto loss = LossConfig::defaults(4, 3, 0.9);
    std::vector<std::vector<double>> before;
    for (const auto& c : model.chain().classifiers) {
      auto w = vals(c.weight), b = vals(c.bias);
      w.insert(w.end(), b.begin(), b.end());
      before.push_back(w);
    }
    const auto report = train_step(model, images, rois, targets, loss, Mode::chained_cascade, 0.1, 0.0);
    ++diff_cases;
    const bool masked = report.mask_counts == std::vector<std::size_t>{1, 0, 0, 0};
    for (std::size_t t = 0; t < 4; ++t) {
      auto w = vals(model.chain().classifiers[t].weight), b = vals(model.chain().classifiers[t].bias);
      w.insert(w.end(), b.begin(), b.end());
      const bool unchanged = w == before[t];
      if (!masked || unchanged != (t > 0)) ++diff_bad;
    }

    // Batch form: the gradient a masked sample adds to classifier 2 is exactly zero.
    ChainParams params;
    for (std::size_t t = 0; t < 2; ++t) {
      if (t > 0) params.a.push_back(testing::random_tensor(rng, {5}, 0.5, 1.5, true));
      params.b.push_back(testing::random_tensor(rng, {4}, 0.5, 1.5, true));
      params.classifiers.push_back({testing::random_tensor(rng, {4, 5}, -1, 1, true), testing::random_tensor(rng, {4}, -1, 1, true)});
    }
    params.classifiers[0].bias.mutable_values()[2] = 15.0;
    const Tensor o1 = testing::random_tensor(rng, {2, 5}), o2 = testing::random_tensor(rng, {2, 5});
    const std::vector<double> lambda{0.01, 1.0}, thr{0.5};
    auto grad_of_cls2 = [&](const std::vector<std::size_t>& rows, const std::vector<std::size_t>& labels) {
      std::vector<double> v1, v2;
      for (auto r : rows) {
        v1.insert(v1.end(), o1.values().begin() + r * 5, o1.values().begin() + (r + 1) * 5);
        v2.insert(v2.end(), o2.values().begin() + r * 5, o2.values().begin() + (r + 1) * 5);
      }
      const std::vector<Tensor> o{Tensor::from({rows.size(), 5}, v1), Tensor::from({rows.size(), 5}, v2)};
      params.classifiers[1].weight.zero_grad();
      const auto out = chain_forward(o, params, {});
      backward(cls_loss(out.probs, labels, lambda, thr, 1e-12));
      return std::vector<double>(params.classifiers[1].weight.grad().begin(), params.classifiers[1].weight.grad().end());
    };
    // Row 0 has label 2 (masked at stage 2), row 1 label 1 (stage 1 is not confident about it).
    const auto both = grad_of_cls2({0, 1}, {2, 1});
    const auto alone = grad_of_cls2({1}, {1});
    grad_bad += both != alone;
  }

  // Mask monotonicity over network-produced probabilities.
  std::mt19937_64 rng(0x5EEB);
  std::size_t samples = 0;
  while (samples < 10000) {
    ParameterStore store;
    const auto params = ChainParams::create(store, 4, 6, 5, rng(), 1.0);
    std::vector<Tensor> o;
    for (int t = 0; t < 4; ++t) o.push_back(testing::random_tensor(rng, {100, 6}, -2, 2));
    NoGradGuard guard;
    const auto out = chain_forward(o, params, {});
    std::uniform_real_distribution<double> u(0, 1);
    const std::vector<double> thr{u(rng), u(rng), u(rng)};
    for (std::size_t r = 0; r < 100; ++r, ++samples) {
      std::vector<std::vector<double>> probs;
      for (const auto& p : out.probs) probs.emplace_back(p.values().begin() + r * 6, p.values().begin() + (r + 1) * 6);
      const auto m = train_mask(probs, r % 6, thr);
      for (std::size_t t = 1; t < m.size(); ++t) sweep_bad += m[t] > m[t - 1];
    }
  }
  Outcome out;
  out.pass = diff_bad == 0 && grad_bad == 0 && sweep_bad == 0;
  out.detail = std::to_string(diff_cases) + " parameter-diff steps (" + std::to_string(diff_bad) +
               " wrong), masked-sample gradient mismatches " + std::to_string(grad_bad) + ", " +
               std::to_string(samples) + "-sample sweep with " + std::to_string(sweep_bad) + " increasing masks";
  return out;
}

// ---- 4-6: the benchmark ----

struct Benchmark {
  fs::path config;
  fs::path work;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::map<std::string, std::vector<EvalReport>> plain;  // zero thresholds
  std::vector<EvalReport> calibrated;                     // chained, 30% targets
  std::vector<nlohmann::json> threshold_files;
  double seconds = 0.0;
  bool ran = false;
  std::string error;
};

fs::path seeded_config(Benchmark& b) {
  // Point the run directories into the work area.
  auto c = cli::load_run_config(b.config);
  c.output_dir = (b.work / "runs").string();
  if (c.data.cache_dir.empty()) c.data.cache_dir = (b.work / "cache").string();
  const fs::path p = b.work / "benchmark.yaml";
  fs::create_directories(b.work);
  std::ofstream(p) << cli::serialize_run_config(c);
  return p;
}

void run_benchmark(Benchmark& b) {
  const auto t0 = Clock::now();
  try {
    const fs::path cfg = seeded_config(b);
    const auto base = cli::load_run_config(cfg);
    const std::vector<Mode> modes{Mode::chained_cascade, Mode::conventional_cascade, Mode::single_stage_baseline,
                                  Mode::chained_cascade_no_feature_chain};
    for (std::uint64_t seed : b.seeds) {
      for (Mode m : modes) {
        cli::Overrides o;
        o.seed = seed;
        o.mode = std::string(to_string(m));
        const auto t = Clock::now();
        {
          MuteStdout mute;
          cli::cmd_train(cfg, o);
          cli::cmd_eval(cfg, std::nullopt, std::nullopt, std::nullopt, o);
        }
        cli::RunConfig rc = base;
        rc.seed = seed;
        rc.mode = m;
        const auto rep = EvalReport::from_json(read_file(cli::run_dir(rc) / "eval.json"));
        std::cout << "  run " << to_string(m) << " seed " << seed << ": mAP " << fmt(rep.map.map) << " ("
                  << fmt(seconds_since(t), 0) << " s)" << std::endl;
        b.plain[std::string(to_string(m))].push_back(rep);

        if (m == Mode::chained_cascade) {
          cli::Overrides c = o;
          const std::vector<double> targets(base.model.stages.size(), 0.3);
          const fs::path dir = cli::run_dir(rc);
          {
            MuteStdout mute;
            cli::cmd_calibrate(cfg, std::nullopt, targets, c);
            c.out = dir / "eval_calibrated.json";
            cli::cmd_eval(cfg, std::nullopt, dir / "thresholds.json", std::nullopt, c);
          }
          b.threshold_files.push_back(nlohmann::json::parse(read_file(dir / "thresholds.json")));
          b.calibrated.push_back(EvalReport::from_json(read_file(dir / "eval_calibrated.json")));
        }
      }
    }
    b.ran = true;
  } catch (const std::exception& e) {
    b.error = e.what();
  }
  b.seconds = seconds_since(t0);
}

double mean_map(const Benchmark& b, Mode m) {
  const auto& reps = b.plain.at(std::string(to_string(m)));
  double s = 0;
  for (const auto& r : reps) s += r.map.map;
  return s / static_cast<double>(reps.size());
}

Outcome ablation(const Benchmark& b) {
  if (!b.ran) return {false, "benchmark did not run: " + b.error};
  const double ch = mean_map(b, Mode::chained_cascade), cv = mean_map(b, Mode::conventional_cascade),
               ss = mean_map(b, Mode::single_stage_baseline), nf = mean_map(b, Mode::chained_cascade_no_feature_chain);
  Outcome o;
  o.pass = ch >= cv && cv >= ss && ch - ss >= 0.02 && b.seconds < 7200.0;
  o.detail = "mean mAP over " + std::to_string(b.seeds.size()) + " seeds: chained " + fmt(ch) + ", conventional " +
             fmt(cv) + ", single " + fmt(ss) + " (chained - single = " + fmt(100 * (ch - ss), 2) +
             " points); no-feature-chain " + fmt(nf) + (ch >= nf ? " <= chained" : " > chained") + "; " +
             fmt(b.seconds / 60.0, 1) + " min";
  return o;
}

Outcome separation(const Benchmark& b) {
  if (!b.ran) return {false, "benchmark did not run: " + b.error};
  const auto& reps = b.plain.at(std::string(to_string(Mode::chained_cascade)));
  const std::size_t T = reps.front().stages.size();
  std::vector<double> gap(T, 0.0);
  for (const auto& r : reps) {
    for (std::size_t t = 0; t < T; ++t) gap[t] += r.stages[t].separation() / static_cast<double>(reps.size());
  }
  bool monotone = true;
  for (std::size_t t = 1; t < T; ++t) monotone = monotone && gap[t] >= gap[t - 1];
  Outcome o;
  o.pass = monotone && gap.back() > gap.front();
  o.detail = "chained_cascade positive-minus-negative max-fg gap by stage:";
  for (double g : gap) o.detail += " " + fmt(g);
  return o;
}

Outcome efficiency(const Benchmark& b) {
  if (!b.ran) return {false, "benchmark did not run: " + b.error};
  bool ok = true;
  std::string per_seed;
  for (std::size_t i = 0; i < b.calibrated.size(); ++i) {
    const auto& r = b.calibrated[i];
    const std::size_t T = r.stages.size();
    std::size_t early = 0;
    for (std::size_t t = 0; t + 1 < T; ++t) early += r.stages[t].rejected_pos;
    const double early_rate = r.positives ? static_cast<double>(early) / static_cast<double>(r.positives) : 0.0;
    ok = ok && r.mean_stages_per_negative <= 0.8 * static_cast<double>(T) && early_rate <= 0.02;
    per_seed += (i ? "; " : "") + std::string("seed ") + std::to_string(b.seeds[i]) + ": stages/neg " +
                fmt(r.mean_stages_per_negative, 3) + ", pos rejected before T " + fmt(100 * early_rate, 2) +
                "%, realized neg rejection";
    for (const auto& v : b.threshold_files[i]["realized_reject"]) per_seed += " " + fmt(v.get<double>(), 3);
  }
  Outcome o;
  o.pass = ok && !b.calibrated.empty();
  o.detail = "30% per-stage targets, limit 0.8*T = " +
             fmt(0.8 * static_cast<double>(b.calibrated.front().stages.size()), 1) + "; " + per_seed;
  return o;
}

// ---- 8: determinism ----

Outcome determinism(const fs::path& config, const fs::path& work) {
  auto c = cli::load_run_config(config);
  c.optimizer.steps = std::min<std::size_t>(c.optimizer.steps, 40);
  c.data.train_images = std::min<std::size_t>(c.data.train_images, 40);
  c.data.test_images = std::min<std::size_t>(c.data.test_images, 20);
  c.data.cache_dir.clear();
  c.output_dir = (work / "det").string();
  fs::create_directories(work);
  const fs::path cfg = work / "determinism.yaml";
  std::ofstream(cfg) << cli::serialize_run_config(c);

  std::vector<std::string> ckpt, report;
  for (const char* run : {"first", "second"}) {
    cli::Overrides o;
    o.out = work / "det" / run;
    o.overwrite = true;
    MuteStdout mute;
    cli::cmd_train(cfg, o);
    const fs::path dir = *o.out;
    cli::cmd_eval(cfg, dir / "checkpoint.bin", std::nullopt, std::nullopt, cli::Overrides{.out = dir / "eval.json", .overwrite = true});
    ckpt.push_back(read_file(dir / "checkpoint.bin"));
    report.push_back(read_file(dir / "eval.json"));
  }
  Outcome o;
  o.pass = !ckpt[0].empty() && ckpt[0] == ckpt[1] && report[0] == report[1];
  o.detail = std::to_string(c.optimizer.steps) + "-step train + eval twice: checkpoints (" +
             std::to_string(ckpt[0].size()) + " bytes) " + (ckpt[0] == ckpt[1] ? "identical" : "DIFFER") +
             ", reports " + (report[0] == report[1] ? "identical" : "DIFFER");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path config, work;
  std::vector<int> only;
  app.add_option("--config", config, "Benchmark run config")->required()->check(CLI::ExistingFile);
  app.add_option("--work", work, "Scratch directory for runs")->required();
  app.add_option("--only", only, "Subset of criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  spdlog::set_level(spdlog::level::warn);
  const char* reuse = std::getenv("CCNET_ACCEPT_REUSE");
  if (!(reuse && std::string(reuse) == "1")) fs::remove_all(work);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };

  Benchmark bench;
  bench.config = config;
  bench.work = work / "benchmark";
  if (wanted(4) || wanted(5) || wanted(6)) {
    std::cout << "running benchmark (" << bench.seeds.size() << " seeds x 4 modes)" << std::endl;
    run_benchmark(bench);
  }

  const std::vector<std::pair<int, std::string>> names{
      {1, "gradient correctness of the full head"}, {2, "oracle equivalences"},
      {3, "single-stage degeneration"},             {4, "ablation ordering"},
      {5, "score separation grows with stage"},      {6, "cascade efficiency"},
      {7, "masking semantics"},                      {8, "determinism"}};
  const std::map<int, std::function<Outcome()>> checks{
      {1, gradient_check},
      {2, oracle_equivalences},
      {3, degeneration},
      {4, [&] { return ablation(bench); }},
      {5, [&] { return separation(bench); }},
      {6, [&] { return efficiency(bench); }},
      {7, masking},
      {8, [&] { return determinism(config, work / "determinism"); }}};

  int failed = 0;
  for (const auto& [k, name] : names) {
    if (!wanted(k)) continue;
    Outcome o;
    try {
      o = checks.at(k)();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << name << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
