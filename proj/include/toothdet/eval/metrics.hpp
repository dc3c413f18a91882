#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "toothdet/data/scene.hpp"
#include "toothdet/geometry/geometry.hpp"

namespace toothdet::eval {

struct MatchPair {
  int gt_index = -1;
  int det_index = -1;
  double iou = 0.0;
};

/// Outcome of matching one scene. Every box appears in at most one pair and
/// every pair has iou > 0.
struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<int> unmatched_gt;
  std::vector<int> unmatched_det;

  int gt_count() const { return int(pairs.size() + unmatched_gt.size()); }
  int det_count() const { return int(pairs.size() + unmatched_det.size()); }
};

/// Greedy max-IoU assignment: each detection goes to the ground-truth box of
/// maximal positive IoU (ties to the lower GT index), then each ground-truth
/// box keeps only its maximum-IoU detection (ties to the lower detection
/// index).
MatchResult match_boxes(const std::vector<geom::Box>& detections,
                        const std::vector<geom::Box>& ground_truth);

/// Empty denominators yield 1.0 by convention and set the defaulted flag so
/// the caller can tell convention from measurement.
struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
  bool precision_defaulted = false;
  bool recall_defaulted = false;
};

/// TP = matched pairs with iou >= threshold, FP = detections - TP,
/// FN = ground truths - TP.
PrecisionRecall precision_recall_at(const MatchResult& match, double threshold);

/// Same counts pooled over many scenes.
PrecisionRecall precision_recall_at(const std::vector<MatchResult>& matches,
                                    double threshold);

struct CurvePoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct ApResult {
  double ap = 0.0;
  double ap50 = 0.0;  // F1 at threshold 0.50
  double ap75 = 0.0;  // F1 at threshold 0.75
  std::array<CurvePoint, 21> curve{};
};

/// Threshold sweep over {0.00, 0.05, ..., 1.00} with dataset-pooled counts.
/// ap integrates precision over recall by trapezoid along the threshold
/// order, with a terminal anchor extending the final precision down to zero
/// recall (a perfect detector scores exactly 1).
ApResult average_precision(const std::vector<MatchResult>& scenes);

struct MeanIou {
  double value = 0.0;
  int64_t pairs = 0;
  bool defined = false;  // false when no pairs exist; value is meaningless then
};

/// Mean IoU over all matched pairs pooled across scenes.
MeanIou mean_iou(const std::vector<MatchResult>& matches);

/// Fixed-universe prediction for one scene: slot i holds the box for tooth
/// id i+1.
using BoxSet32 = std::array<geom::Box, 32>;

struct IdentificationMetrics {
  double precision = 1.0;
  double recall = 1.0;
  bool precision_defaulted = false;
  bool recall_defaulted = false;
  int64_t n_gtb = 0;  // present ground-truth teeth
  int64_t n_db = 0;   // predictions matched to a present tooth at IoU >= 0.5
  int64_t n_tpn = 0;  // matched predictions carrying the correct id
};

/// Identification is scored against present teeth only: a prediction counts
/// as detected when it matches a present tooth's box at IoU >= 0.5, and as a
/// true positive when the matched tooth has the predicted id.
IdentificationMetrics identification_metrics(
    const std::vector<BoxSet32>& predictions,
    const std::vector<data::Scene>& truth);

struct ConfusionMatrix {
  // counts[g][p]: matched present tooth with id g+1 predicted as id p+1.
  std::array<std::array<int64_t, 32>, 32> counts{};
  std::array<std::array<double, 32>, 32> row_normalized{};
};

ConfusionMatrix confusion_matrix(const std::vector<BoxSet32>& predictions,
                                 const std::vector<data::Scene>& truth);

struct EvalReport {
  ApResult detection;
  MeanIou miou;
  IdentificationMetrics identification;
  ConfusionMatrix confusion;
};

/// Full measurement protocol. Detection metrics run against all 32 annotated
/// boxes per scene (absent teeth keep their boxes); identification and the
/// confusion matrix run against present teeth only.
EvalReport evaluate(const std::vector<BoxSet32>& predictions,
                    const std::vector<data::Scene>& truth);

std::string report_json(const EvalReport& report);
std::string report_csv_summary(const EvalReport& report);

}  // namespace toothdet::eval
