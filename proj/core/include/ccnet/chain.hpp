#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccnet/parameter.hpp"
#include "ccnet/tensor.hpp"

namespace ccnet {

// Class index 0 is background everywhere; foreground classes are 1..K.
inline constexpr std::size_t kBackground = 0;

enum class ScoreChaining {
  chained,       // stage t uses the b-scaled sum of raw scores 1..t
  conventional,  // stage t uses b_t * raw_t only
};

enum class Normalization {
  softmax,    // exp(x_k) / sum_j exp(x_j)
  sum_ratio,  // x_k / sum_j x_j; undefined unless the row sum is positive
};

std::string_view to_string(ScoreChaining mode);
std::string_view to_string(Normalization mode);
ScoreChaining parse_score_chaining(std::string_view text);
Normalization parse_normalization(std::string_view text);

struct ChainOptions {
  bool feature_chaining = true;
  ScoreChaining scores = ScoreChaining::chained;
  Normalization normalization = Normalization::softmax;
};

// Stage classifier c_t: affine map C1 -> K+1.
struct Classifier {
  Tensor weight;  // [K+1, C1]
  Tensor bias;    // [K+1]
};

struct ChainParams {
  std::vector<Tensor> a;  // T-1 feature scales [C1], for stages 2..T
  std::vector<Tensor> b;  // T score scales [K+1]
  std::vector<Classifier> classifiers;
  std::vector<double> thresholds;  // r_t in [0,1], applied to normalized probabilities

  std::size_t stages() const { return classifiers.size(); }
  std::size_t feature_dim() const;
  std::size_t num_outputs() const;  // K+1

  // Registers "chain.a<t>", "chain.b<t>", "chain.cls<t>.{weight,bias}". Scales
  // start at exactly 1; classifier weights ~ N(0, weight_std^2); thresholds 0.
  static ChainParams create(ParameterStore& store, std::size_t stages, std::size_t feature_dim,
                            std::size_t num_classes, std::uint64_t seed, double weight_std = 0.01);
};

// f_1 = o_1; f_t = a_t * o_t + f_{t-1}. With chaining disabled f_t = o_t.
// `a` holds the scales for stages 2..T.
std::vector<Tensor> chain_features(std::span<const Tensor> o, std::span<const Tensor> a, bool enabled = true);

Tensor stage_scores(const Tensor& f, const Classifier& classifier);

// p~_t = sum_{i<=t} b_i * raw_i with t = raw.size().
Tensor chain_scores(std::span<const Tensor> raw, std::span<const Tensor> b);

// All partial sums p~_1..p~_T in one pass (or b_t * raw_t when conventional).
std::vector<Tensor> partial_scores(std::span<const Tensor> raw, std::span<const Tensor> b, ScoreChaining mode);

Tensor normalize_scores(const Tensor& partial, Normalization mode = Normalization::softmax);

enum class Verdict { pass, reject };

double max_foreground(std::span<const double> probs);

// Pass iff the largest foreground probability exceeds the threshold.
Verdict gate(std::span<const double> probs, double threshold);

// Differentiable forward of the whole chain for a batch of RoIs; each o_t is
// [R,C1]. Runs as many stages as `o` holds.
struct ChainOutputs {
  std::vector<Tensor> f;
  std::vector<Tensor> raw;
  std::vector<Tensor> partial;
  std::vector<Tensor> probs;
};
ChainOutputs chain_forward(std::span<const Tensor> o, const ChainParams& params, const ChainOptions& options);

struct StageRecord {
  std::vector<double> o;
  std::vector<double> f;
  std::vector<double> raw;
  std::vector<double> partial;
  std::vector<double> probs;
  Verdict gate = Verdict::pass;
};

struct ChainTrace {
  std::vector<StageRecord> stages;  // evaluated stages only
  std::size_t final_stage_reached = 0;  // 1-based
  Verdict verdict = Verdict::pass;

  // p_T when the RoI survived every stage.
  std::optional<std::vector<double>> detection() const;
};

// Single-RoI cascade state; feeding o_t advances one stage. Used both by
// cascade_infer and the batched early-exit evaluator.
class CascadeStepper {
 public:
  CascadeStepper(const ChainParams& params, const ChainOptions& options, std::size_t stage_limit = 0);

  // Evaluates the next stage; returns its record. Throws ContractError once
  // finished() is true.
  const StageRecord& advance(std::span<const double> o);
  bool finished() const;
  std::size_t next_stage() const { return trace_.stages.size(); }  // 0-based
  std::size_t stage_limit() const { return limit_; }
  const ChainTrace& trace() const { return trace_; }
  ChainTrace take_trace() { return std::move(trace_); }

 private:
  const ChainParams* params_;
  ChainOptions options_;
  std::size_t limit_;
  std::vector<double> f_;
  std::vector<double> partial_;
  ChainTrace trace_;
};

// Runs stages 1..T (or `stage_limit` when nonzero), stopping at the first
// rejection. `features(t)` supplies o_t for the 0-based stage t and is only
// called for stages that are actually evaluated.
ChainTrace cascade_infer(const std::function<std::vector<double>(std::size_t)>& features, const ChainParams& params,
                         const ChainOptions& options, std::size_t stage_limit = 0);
ChainTrace cascade_infer(std::span<const std::vector<double>> o, const ChainParams& params,
                         const ChainOptions& options, std::size_t stage_limit = 0);

// One JSON object (no trailing newline):
// {"roi":i,"label":k,"stage_reached":s,"max_fg":[...],"verdict":"pass"|"reject"}
std::string trace_json_line(const ChainTrace& trace, std::size_t roi, std::size_t label);

}  // namespace ccnet
