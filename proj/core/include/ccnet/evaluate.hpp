#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccnet/box.hpp"
#include "ccnet/chain.hpp"
#include "ccnet/model.hpp"
#include "ccnet/synth.hpp"

namespace ccnet {

struct Detection {
  std::size_t image = 0;
  std::size_t label = 1;
  double score = 0.0;
  Box box;
};

struct GroundTruth {
  std::size_t image = 0;
  std::size_t label = 1;
  Box box;
};

// Greedy suppression within one class: visits detections by descending score
// and drops any whose IoU with an already kept one exceeds `iou_threshold`.
// Returns kept indices in visiting order.
std::vector<std::size_t> nms(std::span<const Detection> detections, double iou_threshold);

// Area under the precision envelope (all-point interpolation). `recall` must be
// non-decreasing.
double voc_ap(std::span<const double> recall, std::span<const double> precision);

struct MapResult {
  std::vector<std::optional<double>> ap;  // index k-1 for class k; empty when the class has no ground truth
  double map = 0.0;                       // mean over classes with ground truth
};

// VOC matching: per class, detections in descending score order (ties keep
// input order) claim the unmatched same-image ground truth of highest IoU if
// that IoU reaches the threshold; a detection whose best box is already taken
// is a false positive.
MapResult map_eval(std::span<const Detection> detections, std::span<const GroundTruth> ground_truth,
                   std::size_t num_classes, double iou_threshold = 0.5);

struct EvalOptions {
  std::size_t proposals_per_image = 64;
  double jitter = 0.25;
  double neg_fraction = 0.75;
  std::uint64_t proposal_seed = 0;
  double nms_iou = 0.3;
  double match_iou = 0.5;
  double min_score = 0.01;  // per-class scores below this are not emitted
  bool keep_traces = false;
};

struct StageStats {
  std::size_t evaluated_pos = 0;
  std::size_t evaluated_neg = 0;
  std::size_t rejected_pos = 0;
  std::size_t rejected_neg = 0;
  double mean_pos = 0.0;  // max-foreground probability of positives evaluated here
  double mean_neg = 0.0;
  double var_pos = 0.0;
  double var_neg = 0.0;

  double neg_reject_rate() const;
  double pos_reject_rate() const;
  double separation() const { return mean_pos - mean_neg; }
};

struct EvalReport {
  std::string mode;
  std::vector<double> thresholds;
  MapResult map;
  std::vector<StageStats> stages;
  std::size_t images = 0;
  std::size_t rois = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t detections = 0;
  double mean_stages_per_roi = 0.0;
  double mean_stages_per_negative = 0.0;
  double mean_stages_per_positive = 0.0;
  double neg_reject_rate = 0.0;  // negatives rejected at any stage
  double pos_reject_rate = 0.0;  // positives rejected at any stage

  // Filled only with EvalOptions::keep_traces.
  std::vector<ChainTrace> traces;
  std::vector<std::size_t> trace_labels;

  std::string to_json(int indent = 2) const;
  static EvalReport from_json(const std::string& text);
};

// Early-exit evaluation: every proposal runs the cascade and only the RoIs
// still alive at stage t get a stage-t feature. Survivors emit one detection
// per foreground class from p_T and the regressed box, followed by per-class
// NMS and VOC mAP.
EvalReport evaluate(const Model& model, std::span<const SynthScene> scenes, std::span<const double> thresholds,
                    Mode mode, const EvalOptions& options);

}  // namespace ccnet
