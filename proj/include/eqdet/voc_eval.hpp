// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "eqdet/box.hpp"

namespace eqdet {

struct GroundTruth {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

// TP/FP assignment for one class: detections are swept in descending
// confidence (ties keep input order); a detection is a true positive when it
// overlaps an unclaimed same-image ground-truth box at >= iou_threshold,
// claiming the highest-overlap one. Later detections on a claimed box are
// false positives; unclaimed boxes are the false negatives.
struct TpFpResult {
  std::vector<int> order;   // indices into the detection list, sweep order
  std::vector<char> is_tp;  // parallel to order
  int num_gt = 0;

  int tp_count() const;
  int fp_count() const { return static_cast<int>(is_tp.size()) - tp_count(); }
  int fn_count() const { return num_gt - tp_count(); }
};

TpFpResult assign_tp_fp(const std::vector<Detection>& detections,
                        const std::vector<GroundTruth>& gts,
                        double iou_threshold = 0.5);

// Scalar precision/recall with the empty-detector conventions:
// no detections -> precision 1, no ground truth -> recall 0.
double precision_value(int tp, int fp);
double recall_value(int tp, int fn);

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
};

// One point per detection in sweep order, plus the full-sweep counts.
struct PRCurve {
  std::vector<PRPoint> points;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

PRCurve pr_curve(const TpFpResult& result);

// Eleven-point interpolated average precision: mean over
// r in {0.0, 0.1, ..., 1.0} of the maximum precision at recall >= r
// (0 when no point reaches r).
double interpolated_ap(const PRCurve& curve);

// Arithmetic mean; rejects an empty list.
double mean_ap(const std::vector<double>& per_class_aps);

struct EvalReport {
  std::vector<int> class_ids;   // classes present in the ground truth, sorted
  std::vector<double> ap;       // parallel to class_ids
  std::vector<PRCurve> curves;  // parallel to class_ids
  double map = 0.0;
};

// Full evaluation over every class present in the ground truth. Detections
// of classes absent from the ground truth are ignored. Rejects ground truth
// with no boxes at all.
EvalReport evaluate_detections(const std::vector<Detection>& detections,
                               const std::vector<GroundTruth>& gts,
                               double iou_threshold = 0.5);

void write_eval_report_json(const EvalReport& report, const std::string& path);
void write_pr_curves_csv(const EvalReport& report, const std::string& path);

}  // namespace eqdet
