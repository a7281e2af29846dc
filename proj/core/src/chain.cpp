#include "ccnet/chain.hpp"

#include <algorithm>
#include <random>

#include "ccnet/error.hpp"
#include "ccnet/ops.hpp"
#include "json.hpp"

namespace ccnet {

std::string_view to_string(ScoreChaining mode) {
  return mode == ScoreChaining::chained ? "chained" : "conventional";
}

std::string_view to_string(Normalization mode) { return mode == Normalization::softmax ? "softmax" : "sum_ratio"; }

ScoreChaining parse_score_chaining(std::string_view text) {
  if (text == "chained") return ScoreChaining::chained;
  if (text == "conventional") return ScoreChaining::conventional;
  throw ConfigError("unknown score chaining '" + std::string(text) + "' (expected chained|conventional)");
}

Normalization parse_normalization(std::string_view text) {
  if (text == "softmax") return Normalization::softmax;
  if (text == "sum_ratio") return Normalization::sum_ratio;
  throw ConfigError("unknown normalization '" + std::string(text) + "' (expected softmax|sum_ratio)");
}

std::size_t ChainParams::feature_dim() const { return classifiers.at(0).weight.extent(1); }
std::size_t ChainParams::num_outputs() const { return classifiers.at(0).weight.extent(0); }

ChainParams ChainParams::create(ParameterStore& store, std::size_t stages, std::size_t feature_dim,
                                std::size_t num_classes, std::uint64_t seed, double weight_std) {
  if (stages == 0) throw ConfigError("chain needs at least one stage");
  if (num_classes == 0) throw ConfigError("chain needs at least one foreground class");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, weight_std);
  const std::size_t outputs = num_classes + 1;
  ChainParams p;
  for (std::size_t t = 1; t <= stages; ++t) {
    const std::string id = std::to_string(t);
    if (t >= 2) p.a.push_back(store.add("chain.a" + id, Tensor::full({feature_dim}, 1.0), false));
    p.b.push_back(store.add("chain.b" + id, Tensor::full({outputs}, 1.0), false));
    std::vector<double> w(outputs * feature_dim);
    for (auto& x : w) x = dist(rng);
    Classifier c;
    c.weight = store.add("chain.cls" + id + ".weight", Tensor::from({outputs, feature_dim}, std::move(w)));
    c.bias = store.add("chain.cls" + id + ".bias", Tensor::zeros({outputs}), false);
    p.classifiers.push_back(std::move(c));
  }
  p.thresholds.assign(stages, 0.0);
  return p;
}

std::vector<Tensor> chain_features(std::span<const Tensor> o, std::span<const Tensor> a, bool enabled) {
  std::vector<Tensor> f;
  f.reserve(o.size());
  for (std::size_t t = 0; t < o.size(); ++t) {
    if (o[t].shape() != o[0].shape()) {
      throw ConfigError("chain_features: o_" + std::to_string(t + 1) + " has shape " + to_string(o[t].shape()) +
                        ", o_1 has " + to_string(o[0].shape()));
    }
    if (t == 0 || !enabled) {
      f.push_back(o[t]);
      continue;
    }
    if (a.size() < t) throw ConfigError("chain_features: missing scale vector a_" + std::to_string(t + 1));
    f.push_back(ops::add(ops::scale(o[t], a[t - 1]), f[t - 1]));
  }
  return f;
}

Tensor stage_scores(const Tensor& f, const Classifier& classifier) {
  return ops::linear(f, classifier.weight, classifier.bias);
}

std::vector<Tensor> partial_scores(std::span<const Tensor> raw, std::span<const Tensor> b, ScoreChaining mode) {
  if (b.size() < raw.size()) throw ConfigError("partial_scores: fewer scale vectors than stages");
  std::vector<Tensor> out;
  out.reserve(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    Tensor term = ops::scale(raw[t], b[t]);
    if (t == 0 || mode == ScoreChaining::conventional) {
      out.push_back(term);
    } else {
      out.push_back(ops::add(out.back(), term));
    }
  }
  return out;
}

Tensor chain_scores(std::span<const Tensor> raw, std::span<const Tensor> b) {
  if (raw.empty()) throw ConfigError("chain_scores: no stages");
  return partial_scores(raw, b, ScoreChaining::chained).back();
}

Tensor normalize_scores(const Tensor& partial, Normalization mode) {
  return mode == Normalization::softmax ? ops::softmax(partial) : ops::sum_normalize(partial);
}

double max_foreground(std::span<const double> probs) {
  if (probs.size() < 2) throw ContractError("max_foreground: need background plus at least one class");
  return *std::max_element(probs.begin() + 1, probs.end());
}

Verdict gate(std::span<const double> probs, double threshold) {
  return max_foreground(probs) > threshold ? Verdict::pass : Verdict::reject;
}

ChainOutputs chain_forward(std::span<const Tensor> o, const ChainParams& params, const ChainOptions& options) {
  if (o.size() > params.stages()) throw ConfigError("chain_forward: more feature stages than classifiers");
  ChainOutputs out;
  out.f = chain_features(o, params.a, options.feature_chaining);
  for (std::size_t t = 0; t < o.size(); ++t) out.raw.push_back(stage_scores(out.f[t], params.classifiers[t]));
  out.partial = partial_scores(out.raw, params.b, options.scores);
  for (const auto& p : out.partial) out.probs.push_back(normalize_scores(p, options.normalization));
  return out;
}

std::optional<std::vector<double>> ChainTrace::detection() const {
  if (verdict == Verdict::reject || stages.empty()) return std::nullopt;
  return stages.back().probs;
}

CascadeStepper::CascadeStepper(const ChainParams& params, const ChainOptions& options, std::size_t stage_limit)
    : params_(&params), options_(options), limit_(stage_limit == 0 ? params.stages() : stage_limit) {
  if (limit_ > params.stages()) throw ConfigError("cascade: stage limit exceeds configured stages");
  if (params.thresholds.size() < limit_) throw ConfigError("cascade: missing thresholds");
}

bool CascadeStepper::finished() const {
  return trace_.verdict == Verdict::reject || trace_.stages.size() >= limit_;
}

const StageRecord& CascadeStepper::advance(std::span<const double> o) {
  if (finished()) throw ContractError("cascade: advance() after the cascade finished");
  NoGradGuard no_grad;
  const std::size_t t = trace_.stages.size();
  const std::size_t dim = params_->feature_dim();
  if (o.size() != dim) throw ConfigError("cascade: o_t has length " + std::to_string(o.size()) + ", expected " + std::to_string(dim));

  Tensor ot = Tensor::from({dim}, std::vector<double>(o.begin(), o.end()));
  Tensor ft = ot;
  if (t > 0 && options_.feature_chaining) {
    ft = ops::add(ops::scale(ot, params_->a[t - 1]), Tensor::from({dim}, f_));
  }
  Tensor raw = stage_scores(ft, params_->classifiers[t]);
  Tensor term = ops::scale(raw, params_->b[t]);
  if (t > 0 && options_.scores == ScoreChaining::chained) {
    term = ops::add(Tensor::from(term.shape(), partial_), term);
  }
  Tensor probs = normalize_scores(term, options_.normalization);

  StageRecord rec;
  rec.o.assign(o.begin(), o.end());
  rec.f.assign(ft.values().begin(), ft.values().end());
  rec.raw.assign(raw.values().begin(), raw.values().end());
  rec.partial.assign(term.values().begin(), term.values().end());
  rec.probs.assign(probs.values().begin(), probs.values().end());
  rec.gate = gate(rec.probs, params_->thresholds[t]);
  f_ = rec.f;
  partial_ = rec.partial;
  trace_.stages.push_back(std::move(rec));
  trace_.final_stage_reached = t + 1;
  trace_.verdict = trace_.stages.back().gate;
  return trace_.stages.back();
}

ChainTrace cascade_infer(const std::function<std::vector<double>(std::size_t)>& features, const ChainParams& params,
                         const ChainOptions& options, std::size_t stage_limit) {
  CascadeStepper stepper(params, options, stage_limit);
  while (!stepper.finished()) stepper.advance(features(stepper.next_stage()));
  return stepper.take_trace();
}

ChainTrace cascade_infer(std::span<const std::vector<double>> o, const ChainParams& params,
                         const ChainOptions& options, std::size_t stage_limit) {
  const std::size_t needed = stage_limit == 0 ? params.stages() : stage_limit;
  if (o.size() < needed) throw ConfigError("cascade_infer: need " + std::to_string(needed) + " feature vectors");
  return cascade_infer([&](std::size_t t) { return o[t]; }, params, options, stage_limit);
}

std::string trace_json_line(const ChainTrace& trace, std::size_t roi, std::size_t label) {
  nlohmann::json j;
  j["roi"] = roi;
  j["label"] = label;
  j["stage_reached"] = trace.final_stage_reached;
  auto max_fg = nlohmann::json::array();
  for (const auto& s : trace.stages) max_fg.push_back(max_foreground(s.probs));
  j["max_fg"] = std::move(max_fg);
  j["verdict"] = trace.verdict == Verdict::pass ? "pass" : "reject";
  return j.dump();
}

}  // namespace ccnet
