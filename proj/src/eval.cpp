#include "toothdet/eval/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>

namespace toothdet::eval {

MatchResult match_boxes(const std::vector<geom::Box>& detections,
                        const std::vector<geom::Box>& ground_truth) {
  const int nd = int(detections.size());
  const int ng = int(ground_truth.size());

  // Pass 1: each detection picks the GT box of maximal positive IoU.
  std::vector<int> det_to_gt(nd, -1);
  std::vector<double> det_iou(nd, 0.0);
  for (int d = 0; d < nd; ++d) {
    for (int g = 0; g < ng; ++g) {
      const double v = geom::iou(detections[d], ground_truth[g]);
      if (v > 0.0 && v > det_iou[d]) {  // ties keep the lower GT index
        det_iou[d] = v;
        det_to_gt[d] = g;
      }
    }
  }

  // Pass 2: each GT keeps only its maximum-IoU assigned detection.
  std::vector<int> gt_to_det(ng, -1);
  for (int d = 0; d < nd; ++d) {
    const int g = det_to_gt[d];
    if (g < 0) continue;
    if (gt_to_det[g] < 0 || det_iou[d] > det_iou[gt_to_det[g]])
      gt_to_det[g] = d;  // ties keep the lower detection index
  }

  MatchResult out;
  std::vector<bool> det_matched(nd, false);
  for (int g = 0; g < ng; ++g) {
    if (gt_to_det[g] < 0) {
      out.unmatched_gt.push_back(g);
    } else {
      const int d = gt_to_det[g];
      out.pairs.push_back({g, d, det_iou[d]});
      det_matched[d] = true;
    }
  }
  for (int d = 0; d < nd; ++d)
    if (!det_matched[d]) out.unmatched_det.push_back(d);
  return out;
}

namespace {

struct PooledCounts {
  int64_t tp = 0;
  int64_t detections = 0;
  int64_t ground_truth = 0;
};

PooledCounts pooled_counts(const std::vector<MatchResult>& matches,
                           double threshold) {
  PooledCounts c;
  for (const MatchResult& m : matches) {
    for (const MatchPair& p : m.pairs)
      if (p.iou >= threshold) ++c.tp;
    c.detections += m.det_count();
    c.ground_truth += m.gt_count();
  }
  return c;
}

PrecisionRecall from_counts(const PooledCounts& c) {
  PrecisionRecall pr;
  if (c.detections == 0) {
    pr.precision_defaulted = true;  // precision 1.0 by convention
  } else {
    pr.precision = double(c.tp) / double(c.detections);
  }
  if (c.ground_truth == 0) {
    pr.recall_defaulted = true;
  } else {
    pr.recall = double(c.tp) / double(c.ground_truth);
  }
  return pr;
}

double f1(const PrecisionRecall& pr) {
  const double s = pr.precision + pr.recall;
  return s > 0.0 ? 2.0 * pr.precision * pr.recall / s : 0.0;
}

}  // namespace

PrecisionRecall precision_recall_at(const MatchResult& match,
                                    double threshold) {
  return precision_recall_at(std::vector<MatchResult>{match}, threshold);
}

PrecisionRecall precision_recall_at(const std::vector<MatchResult>& matches,
                                    double threshold) {
  return from_counts(pooled_counts(matches, threshold));
}

ApResult average_precision(const std::vector<MatchResult>& scenes) {
  ApResult out;
  for (int i = 0; i < 21; ++i) {
    const double threshold = i * 0.05;
    const PrecisionRecall pr = precision_recall_at(scenes, threshold);
    out.curve[i] = {threshold, pr.precision, pr.recall};
    if (i == 10) out.ap50 = f1(pr);
    if (i == 15) out.ap75 = f1(pr);
  }

  // Trapezoid over the recall-ordered sequence (recall is non-increasing in
  // the threshold), closed by extending the final precision to zero recall.
  double area = 0.0;
  for (int i = 0; i + 1 < 21; ++i)
    area += (out.curve[i].recall - out.curve[i + 1].recall) *
            (out.curve[i].precision + out.curve[i + 1].precision) / 2.0;
  area += out.curve[20].recall * out.curve[20].precision;
  out.ap = area;
  return out;
}

MeanIou mean_iou(const std::vector<MatchResult>& matches) {
  MeanIou out;
  double total = 0.0;
  for (const MatchResult& m : matches) {
    for (const MatchPair& p : m.pairs) {
      total += p.iou;
      ++out.pairs;
    }
  }
  if (out.pairs > 0) {
    out.value = total / double(out.pairs);
    out.defined = true;
  }
  return out;
}

namespace {

// Present-teeth-only matching for a single scene: ground truth is the list
// of present boxes; detections are all 32 predicted boxes. Returns pairs at
// IoU >= 0.5 as (tooth id of GT, predicted id, iou).
struct IdPair {
  int gt_id;
  int pred_id;
};

std::vector<IdPair> present_matches(const BoxSet32& prediction,
                                    const data::Scene& scene) {
  std::vector<geom::Box> gt_boxes;
  std::vector<int> gt_ids;
  for (const data::ToothAnnotation& t : scene.teeth) {
    if (!t.present) continue;
    gt_boxes.push_back(t.box);
    gt_ids.push_back(t.tooth.index);
  }
  const std::vector<geom::Box> dets(prediction.begin(), prediction.end());
  const MatchResult match = match_boxes(dets, gt_boxes);
  std::vector<IdPair> out;
  for (const MatchPair& p : match.pairs)
    if (p.iou >= 0.5) out.push_back({gt_ids[p.gt_index], p.det_index + 1});
  return out;
}

int64_t count_present(const std::vector<data::Scene>& truth) {
  int64_t n = 0;
  for (const data::Scene& s : truth)
    for (const data::ToothAnnotation& t : s.teeth)
      if (t.present) ++n;
  return n;
}

}  // namespace

IdentificationMetrics identification_metrics(
    const std::vector<BoxSet32>& predictions,
    const std::vector<data::Scene>& truth) {
  if (predictions.size() != truth.size())
    throw std::invalid_argument(
        "identification_metrics: prediction/truth length mismatch");
  IdentificationMetrics out;
  out.n_gtb = count_present(truth);
  for (size_t i = 0; i < truth.size(); ++i) {
    for (const IdPair& p : present_matches(predictions[i], truth[i])) {
      ++out.n_db;
      if (p.gt_id == p.pred_id) ++out.n_tpn;
    }
  }
  if (out.n_db == 0) {
    out.precision_defaulted = true;
  } else {
    out.precision = double(out.n_tpn) / double(out.n_db);
  }
  if (out.n_gtb == 0) {
    out.recall_defaulted = true;
  } else {
    out.recall = double(out.n_tpn) / double(out.n_gtb);
  }
  return out;
}

ConfusionMatrix confusion_matrix(const std::vector<BoxSet32>& predictions,
                                 const std::vector<data::Scene>& truth) {
  if (predictions.size() != truth.size())
    throw std::invalid_argument(
        "confusion_matrix: prediction/truth length mismatch");
  ConfusionMatrix cm;
  for (size_t i = 0; i < truth.size(); ++i)
    for (const IdPair& p : present_matches(predictions[i], truth[i]))
      ++cm.counts[p.gt_id - 1][p.pred_id - 1];
  for (int g = 0; g < 32; ++g) {
    int64_t row = 0;
    for (int p = 0; p < 32; ++p) row += cm.counts[g][p];
    if (row > 0)
      for (int p = 0; p < 32; ++p)
        cm.row_normalized[g][p] = double(cm.counts[g][p]) / double(row);
  }
  return cm;
}

EvalReport evaluate(const std::vector<BoxSet32>& predictions,
                    const std::vector<data::Scene>& truth) {
  if (predictions.size() != truth.size())
    throw std::invalid_argument("evaluate: prediction/truth length mismatch");
  std::vector<MatchResult> matches;
  matches.reserve(truth.size());
  for (size_t i = 0; i < truth.size(); ++i) {
    std::vector<geom::Box> gt;
    gt.reserve(32);
    for (const data::ToothAnnotation& t : truth[i].teeth) gt.push_back(t.box);
    const std::vector<geom::Box> dets(predictions[i].begin(),
                                      predictions[i].end());
    matches.push_back(match_boxes(dets, gt));
  }

  EvalReport report;
  report.detection = average_precision(matches);
  report.miou = mean_iou(matches);
  report.identification = identification_metrics(predictions, truth);
  report.confusion = confusion_matrix(predictions, truth);
  return report;
}

std::string report_json(const EvalReport& report) {
  nlohmann::json curve = nlohmann::json::array();
  for (const CurvePoint& p : report.detection.curve)
    curve.push_back({{"threshold", p.threshold},
                     {"precision", p.precision},
                     {"recall", p.recall}});
  nlohmann::json counts = nlohmann::json::array();
  nlohmann::json normalized = nlohmann::json::array();
  for (int g = 0; g < 32; ++g) {
    counts.push_back(report.confusion.counts[g]);
    normalized.push_back(report.confusion.row_normalized[g]);
  }
  const nlohmann::json doc = {
      {"ap", report.detection.ap},
      {"ap50", report.detection.ap50},
      {"ap75", report.detection.ap75},
      {"miou",
       {{"value", report.miou.value},
        {"pairs", report.miou.pairs},
        {"defined", report.miou.defined}}},
      {"curve", curve},
      {"identification",
       {{"precision", report.identification.precision},
        {"recall", report.identification.recall},
        {"precision_defaulted", report.identification.precision_defaulted},
        {"recall_defaulted", report.identification.recall_defaulted},
        {"n_gtb", report.identification.n_gtb},
        {"n_db", report.identification.n_db},
        {"n_tpn", report.identification.n_tpn}}},
      {"confusion", counts},
      {"confusion_row_normalized", normalized}};
  return doc.dump(2) + "\n";
}

std::string report_csv_summary(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "ap,ap50,ap75,miou,id_precision,id_recall,n_gtb,n_db,n_tpn\n";
  out << report.detection.ap << ',' << report.detection.ap50 << ','
      << report.detection.ap75 << ',' << report.miou.value << ','
      << report.identification.precision << ','
      << report.identification.recall << ',' << report.identification.n_gtb
      << ',' << report.identification.n_db << ','
      << report.identification.n_tpn << '\n';
  return out.str();
}

}  // namespace toothdet::eval
