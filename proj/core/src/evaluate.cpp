#include "ccnet/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ccnet/error.hpp"
#include "ccnet/objective.hpp"
#include "ccnet/proposals.hpp"
#include "ccnet/random.hpp"
#include "json.hpp"

namespace ccnet {

namespace {

// Keeps decoded boxes from exploding on wild width/height offsets.
constexpr double kMaxLogScale = 4.0;

struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 0 ? m2 / static_cast<double>(n) : 0.0; }
};

std::vector<std::size_t> by_score(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<std::size_t> nms(std::span<const Detection> detections, double iou_threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i : by_score(detections)) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(detections[k].box, detections[i].box) > iou_threshold;
    });
    if (clear) kept.push_back(i);
  }
  return kept;
}

double voc_ap(std::span<const double> recall, std::span<const double> precision) {
  if (recall.size() != precision.size()) throw ConfigError("voc_ap: recall and precision lengths differ");
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

MapResult map_eval(std::span<const Detection> detections, std::span<const GroundTruth> ground_truth,
                   std::size_t num_classes, double iou_threshold) {
  MapResult result;
  result.ap.resize(num_classes);
  std::size_t with_gt = 0;
  double sum = 0.0;
  for (std::size_t k = 1; k <= num_classes; ++k) {
    std::vector<const GroundTruth*> gts;
    for (const auto& g : ground_truth) {
      if (g.label == k) gts.push_back(&g);
    }
    if (gts.empty()) continue;
    std::vector<Detection> dets;
    for (const auto& d : detections) {
      if (d.label == k) dets.push_back(d);
    }

    std::vector<bool> taken(gts.size(), false);
    std::vector<double> recall, precision;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i : by_score(dets)) {
      double best = -1.0;
      std::size_t match = gts.size();
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g]->image != dets[i].image) continue;
        const double v = iou(gts[g]->box, dets[i].box);
        if (v > best) {
          best = v;
          match = g;
        }
      }
      if (match < gts.size() && best >= iou_threshold && !taken[match]) {
        taken[match] = true;
        ++tp;
      } else {
        ++fp;
      }
      recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    const double ap = voc_ap(recall, precision);
    result.ap[k - 1] = ap;
    sum += ap;
    ++with_gt;
  }
  result.map = with_gt == 0 ? 0.0 : sum / static_cast<double>(with_gt);
  return result;
}

double StageStats::neg_reject_rate() const { return ratio(rejected_neg, evaluated_neg); }
double StageStats::pos_reject_rate() const { return ratio(rejected_pos, evaluated_pos); }

EvalReport evaluate(const Model& model, std::span<const SynthScene> scenes, std::span<const double> thresholds,
                    Mode mode, const EvalOptions& options) {
  const ModelConfig& cfg = model.config();
  const std::size_t T = cfg.stages.size();
  if (thresholds.size() != T) {
    throw ConfigError("evaluate: expected " + std::to_string(T) + " thresholds, got " +
                      std::to_string(thresholds.size()));
  }
  for (double r : thresholds) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("evaluate: thresholds must lie in [0,1]");
  }
  const std::size_t limit = active_stages(mode, T);
  const std::size_t K = cfg.num_classes;
  ChainParams params = model.chain();
  params.thresholds.assign(thresholds.begin(), thresholds.end());
  const ChainOptions chain_opts = chain_options(mode, cfg.normalization);
  NoGradGuard no_grad;

  EvalReport report;
  report.mode = std::string(to_string(mode));
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  report.images = scenes.size();
  std::vector<Moments> pos(limit), neg(limit);
  report.stages.resize(limit);
  std::size_t stages_all = 0, stages_neg = 0, stages_pos = 0, rejected_pos = 0, rejected_neg = 0;

  std::vector<Detection> detections;
  std::vector<GroundTruth> ground_truth;
  for (std::size_t img = 0; img < scenes.size(); ++img) {
    const SynthScene& scene = scenes[img];
    for (const auto& o : scene.objects) ground_truth.push_back({img, o.label, o.box});
    const auto proposals = gen_proposals(scene, options.proposals_per_image, options.jitter, options.neg_fraction,
                                         derive_seed(options.proposal_seed, img));
    const double image_h = static_cast<double>(scene.image.extent(1));
    const double image_w = static_cast<double>(scene.image.extent(2));
    const std::size_t index[] = {img};
    const Tensor featmap = model.backbone().forward(batch_images(scenes, index));

    std::vector<CascadeStepper> steppers;
    steppers.reserve(proposals.size());
    for (std::size_t r = 0; r < proposals.size(); ++r) steppers.emplace_back(params, chain_opts, limit);

    for (std::size_t t = 0; t < limit; ++t) {
      std::vector<std::size_t> alive;
      std::vector<RoiRef> rois;
      for (std::size_t r = 0; r < proposals.size(); ++r) {
        if (steppers[r].finished()) continue;
        alive.push_back(r);
        rois.push_back({0, proposals[r].box});
      }
      if (alive.empty()) break;
      const Tensor o = stage_feature(featmap, rois, cfg.stages[t], model.heads()[t], image_w, image_h,
                                     Backbone::kStride);
      const std::size_t dim = o.extent(1);
      StageStats& st = report.stages[t];
      for (std::size_t j = 0; j < alive.size(); ++j) {
        const std::size_t r = alive[j];
        const StageRecord& rec = steppers[r].advance(o.values().subspan(j * dim, dim));
        const double score = max_foreground(rec.probs);
        const bool rejected = rec.gate == Verdict::reject;
        if (proposals[r].target.label != kBackground) {
          ++st.evaluated_pos;
          st.rejected_pos += rejected ? 1 : 0;
          pos[t].add(score);
        } else {
          ++st.evaluated_neg;
          st.rejected_neg += rejected ? 1 : 0;
          neg[t].add(score);
        }
      }
    }

    std::vector<Detection> image_dets;
    for (std::size_t r = 0; r < proposals.size(); ++r) {
      const ChainTrace& trace = steppers[r].trace();
      const bool positive = proposals[r].target.label != kBackground;
      stages_all += trace.final_stage_reached;
      (positive ? stages_pos : stages_neg) += trace.final_stage_reached;
      if (trace.verdict == Verdict::reject) (positive ? rejected_pos : rejected_neg) += 1;
      ++(positive ? report.positives : report.negatives);

      if (auto probs = trace.detection()) {
        const auto& f = trace.stages.back().f;
        const Tensor deltas = model.box_deltas(Tensor::from({f.size()}, f));
        auto d = deltas.values();
        for (std::size_t k = 1; k <= K; ++k) {
          const double score = (*probs)[k];
          if (score < options.min_score) continue;
          Offsets off{d[4 * (k - 1)], d[4 * (k - 1) + 1], std::min(d[4 * (k - 1) + 2], kMaxLogScale),
                      std::min(d[4 * (k - 1) + 3], kMaxLogScale)};
          const Box b = bbox_decode(proposals[r].box, off);
          const Box clipped = Box::from_corners(std::max(0.0, b.x1()), std::max(0.0, b.y1()),
                                                std::min(image_w, b.x2()), std::min(image_h, b.y2()));
          if (!clipped.valid()) continue;
          image_dets.push_back({img, k, score, clipped});
        }
      }
      if (options.keep_traces) {
        report.traces.push_back(trace);
        report.trace_labels.push_back(proposals[r].target.label);
      }
    }

    for (std::size_t k = 1; k <= K; ++k) {
      std::vector<Detection> cls;
      for (const auto& d : image_dets) {
        if (d.label == k) cls.push_back(d);
      }
      for (std::size_t i : nms(cls, options.nms_iou)) detections.push_back(cls[i]);
    }
  }

  for (std::size_t t = 0; t < limit; ++t) {
    StageStats& st = report.stages[t];
    st.mean_pos = pos[t].mean;
    st.var_pos = pos[t].variance();
    st.mean_neg = neg[t].mean;
    st.var_neg = neg[t].variance();
  }
  report.rois = report.positives + report.negatives;
  report.detections = detections.size();
  report.mean_stages_per_roi = ratio(stages_all, report.rois);
  report.mean_stages_per_negative = ratio(stages_neg, report.negatives);
  report.mean_stages_per_positive = ratio(stages_pos, report.positives);
  report.neg_reject_rate = ratio(rejected_neg, report.negatives);
  report.pos_reject_rate = ratio(rejected_pos, report.positives);
  report.map = map_eval(detections, ground_truth, K, options.match_iou);
  return report;
}

std::string EvalReport::to_json(int indent) const {
  nlohmann::json j;
  j["mode"] = mode;
  j["thresholds"] = thresholds;
  j["mAP"] = map.map;
  auto ap = nlohmann::json::array();
  for (const auto& a : map.ap) ap.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  j["ap"] = std::move(ap);
  j["images"] = images;
  j["rois"] = rois;
  j["positives"] = positives;
  j["negatives"] = negatives;
  j["detections"] = detections;
  j["mean_stages_per_roi"] = mean_stages_per_roi;
  j["mean_stages_per_negative"] = mean_stages_per_negative;
  j["mean_stages_per_positive"] = mean_stages_per_positive;
  j["neg_reject_rate"] = neg_reject_rate;
  j["pos_reject_rate"] = pos_reject_rate;
  auto st = nlohmann::json::array();
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const StageStats& s = stages[t];
    st.push_back({{"stage", t + 1},
                  {"evaluated_pos", s.evaluated_pos},
                  {"evaluated_neg", s.evaluated_neg},
                  {"rejected_pos", s.rejected_pos},
                  {"rejected_neg", s.rejected_neg},
                  {"neg_reject_rate", s.neg_reject_rate()},
                  {"pos_reject_rate", s.pos_reject_rate()},
                  {"mean_pos", s.mean_pos},
                  {"mean_neg", s.mean_neg},
                  {"var_pos", s.var_pos},
                  {"var_neg", s.var_neg},
                  {"separation", s.separation()}});
  }
  j["stages"] = std::move(st);
  return j.dump(indent);
}

EvalReport EvalReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.mode = j.at("mode").get<std::string>();
  r.thresholds = j.at("thresholds").get<std::vector<double>>();
  r.map.map = j.at("mAP").get<double>();
  for (const auto& a : j.at("ap")) r.map.ap.push_back(a.is_null() ? std::nullopt : std::optional(a.get<double>()));
  r.images = j.at("images").get<std::size_t>();
  r.rois = j.at("rois").get<std::size_t>();
  r.positives = j.at("positives").get<std::size_t>();
  r.negatives = j.at("negatives").get<std::size_t>();
  r.detections = j.at("detections").get<std::size_t>();
  r.mean_stages_per_roi = j.at("mean_stages_per_roi").get<double>();
  r.mean_stages_per_negative = j.at("mean_stages_per_negative").get<double>();
  r.mean_stages_per_positive = j.at("mean_stages_per_positive").get<double>();
  r.neg_reject_rate = j.at("neg_reject_rate").get<double>();
  r.pos_reject_rate = j.at("pos_reject_rate").get<double>();
  for (const auto& s : j.at("stages")) {
    StageStats st;
    st.evaluated_pos = s.at("evaluated_pos").get<std::size_t>();
    st.evaluated_neg = s.at("evaluated_neg").get<std::size_t>();
    st.rejected_pos = s.at("rejected_pos").get<std::size_t>();
    st.rejected_neg = s.at("rejected_neg").get<std::size_t>();
    st.mean_pos = s.at("mean_pos").get<double>();
    st.mean_neg = s.at("mean_neg").get<double>();
    st.var_pos = s.at("var_pos").get<double>();
    st.var_neg = s.at("var_neg").get<double>();
    r.stages.push_back(st);
  }
  return r;
}

}  // namespace ccnet
