// SPDX-License-Identifier: Apache-2.0
#include "eqdet/voc_eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace eqdet {

int TpFpResult::tp_count() const {
  int n = 0;
  for (char f : is_tp) n += f != 0;
  return n;
}

TpFpResult assign_tp_fp(const std::vector<Detection>& detections,
                        const std::vector<GroundTruth>& gts,
                        double iou_threshold) {
  TpFpResult result;
  result.num_gt = static_cast<int>(gts.size());

  result.order.resize(detections.size());
  std::iota(result.order.begin(), result.order.end(), 0);
  std::stable_sort(result.order.begin(), result.order.end(),
                   [&](int a, int b) {
                     return detections[a].score > detections[b].score;
                   });

  // Ground-truth boxes grouped by image, with claim flags.
  std::map<int, std::vector<int>> gt_by_image;
  for (int g = 0; g < result.num_gt; ++g)
    gt_by_image[gts[g].image_id].push_back(g);
  std::vector<char> claimed(gts.size(), 0);

  result.is_tp.assign(detections.size(), 0);
  for (size_t rank = 0; rank < result.order.size(); ++rank) {
    const Detection& det = detections[result.order[rank]];
    auto it = gt_by_image.find(det.image_id);
    if (it == gt_by_image.end()) continue;
    // Claim the highest-overlap ground truth among those still unclaimed;
    // a detection is correct as long as any unclaimed box clears the bar.
    int best_g = -1;
    double best_ov = 0.0;
    for (int g : it->second) {
      if (claimed[g]) continue;
      const double ov = jaccard(det.box, gts[g].box);
      if (ov > best_ov) {
        best_ov = ov;
        best_g = g;
      }
    }
    if (best_g >= 0 && best_ov >= iou_threshold) {
      claimed[best_g] = 1;
      result.is_tp[rank] = 1;
    }
  }
  return result;
}

double precision_value(int tp, int fp) {
  if (tp < 0 || fp < 0)
    throw std::invalid_argument("precision_value: negative count");
  if (tp + fp == 0) return 1.0;
  return static_cast<double>(tp) / (tp + fp);
}

double recall_value(int tp, int fn) {
  if (tp < 0 || fn < 0)
    throw std::invalid_argument("recall_value: negative count");
  if (tp + fn == 0) return 0.0;
  return static_cast<double>(tp) / (tp + fn);
}

PRCurve pr_curve(const TpFpResult& result) {
  PRCurve curve;
  int ctp = 0;
  int cfp = 0;
  curve.points.reserve(result.is_tp.size());
  for (char flag : result.is_tp) {
    if (flag)
      ++ctp;
    else
      ++cfp;
    PRPoint p;
    p.precision = precision_value(ctp, cfp);
    p.recall = recall_value(ctp, result.num_gt - ctp);
    curve.points.push_back(p);
  }
  curve.tp = ctp;
  curve.fp = cfp;
  curve.fn = result.num_gt - ctp;
  return curve;
}

double interpolated_ap(const PRCurve& curve) {
  double sum = 0.0;
  for (int i = 0; i <= 10; ++i) {
    const double r = i / 10.0;
    double best = 0.0;
    for (const PRPoint& p : curve.points)
      if (p.recall >= r) best = std::max(best, p.precision);
    sum += best;
  }
  return sum / 11.0;
}

double mean_ap(const std::vector<double>& per_class_aps) {
  if (per_class_aps.empty())
    throw std::invalid_argument("mean_ap: empty AP list");
  double sum = 0.0;
  for (double ap : per_class_aps) sum += ap;
  return sum / per_class_aps.size();
}

EvalReport evaluate_detections(const std::vector<Detection>& detections,
                               const std::vector<GroundTruth>& gts,
                               double iou_threshold) {
  if (gts.empty())
    throw std::invalid_argument(
        "evaluate_detections: ground truth holds no boxes");

  std::set<int> classes;
  for (const GroundTruth& g : gts) classes.insert(g.class_id);

  EvalReport report;
  for (int cls : classes) {
    std::vector<Detection> cls_dets;
    for (const Detection& d : detections)
      if (d.class_id == cls) cls_dets.push_back(d);
    std::vector<GroundTruth> cls_gts;
    for (const GroundTruth& g : gts)
      if (g.class_id == cls) cls_gts.push_back(g);

    const TpFpResult flags = assign_tp_fp(cls_dets, cls_gts, iou_threshold);
    PRCurve curve = pr_curve(flags);
    report.class_ids.push_back(cls);
    report.ap.push_back(interpolated_ap(curve));
    report.curves.push_back(std::move(curve));
  }
  report.map = mean_ap(report.ap);
  return report;
}

void write_eval_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["map"] = report.map;
  j["classes"] = nlohmann::json::array();
  for (size_t i = 0; i < report.class_ids.size(); ++i) {
    nlohmann::json c;
    c["class_id"] = report.class_ids[i];
    c["ap"] = report.ap[i];
    c["tp"] = report.curves[i].tp;
    c["fp"] = report.curves[i].fp;
    c["fn"] = report.curves[i].fn;
    j["classes"].push_back(c);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report file: " + path);
  out << j.dump(2) << "\n";
}

void write_pr_curves_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve file: " + path);
  out << "class_id,recall,precision\n";
  for (size_t i = 0; i < report.class_ids.size(); ++i)
    for (const PRPoint& p : report.curves[i].points)
      out << report.class_ids[i] << "," << p.recall << "," << p.precision
          << "\n";
}

}  // namespace eqdet
