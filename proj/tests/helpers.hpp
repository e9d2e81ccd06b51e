// SPDX-License-Identifier: Apache-2.0
// Shared test utilities: independent re-implementations used as oracles,
// random-case generators, and finite-difference gradient checking.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "eqdet/box.hpp"
#include "eqdet/rng.hpp"
#include "eqdet/tensor.hpp"
#include "eqdet/voc_eval.hpp"

namespace testutil {

using namespace eqdet;

// Relative error with an absolute floor, the usual gradient-check metric.
inline double rel_err(double a, double b) {
  const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / scale;
}

inline Box random_box(Rng& rng, double min_size = 0.02) {
  Box b;
  b.w = rng.uniform(min_size, 0.6);
  b.h = rng.uniform(min_size, 0.6);
  b.cx = rng.uniform(0.0, 1.0);
  b.cy = rng.uniform(0.0, 1.0);
  return b;
}

// Interval-overlap jaccard written independently of the library's formula.
inline double oracle_jaccard(const Box& a, const Box& b) {
  const double ix = std::max(
      0.0, std::min(a.xmax(), b.xmax()) - std::max(a.xmin(), b.xmin()));
  const double iy = std::max(
      0.0, std::min(a.ymax(), b.ymax()) - std::max(a.ymin(), b.ymin()));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Greedy NMS oracle: walk score-sorted detections per class with a plain
// O(n^2) suppression loop.
inline std::vector<Detection> oracle_nms(std::vector<Detection> dets,
                                         double iou_threshold, int top_k) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  std::vector<Detection> kept;
  std::vector<int> kept_per_class(1, 0);
  for (const Detection& d : dets) {
    if (d.class_id >= static_cast<int>(kept_per_class.size()))
      kept_per_class.resize(d.class_id + 1, 0);
    if (kept_per_class[d.class_id] >= top_k) continue;
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.class_id == d.class_id &&
          oracle_jaccard(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) {
      kept.push_back(d);
      ++kept_per_class[d.class_id];
    }
  }
  return kept;
}

// Confidence-order assignment oracle: claim the best unclaimed ground truth
// at or above the threshold, trying detections one by one.
struct OracleAssignment {
  std::vector<char> is_tp;  // in confidence order
  std::vector<int> order;   // detection indices in confidence order
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

inline OracleAssignment oracle_assign(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruth>& gts,
                                      double iou_threshold) {
  OracleAssignment out;
  out.order.resize(dets.size());
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<char> claimed(gts.size(), 0);
  for (int idx : out.order) {
    const Detection& d = dets[idx];
    int best = -1;
    double best_overlap = 0.0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].image_id != d.image_id ||
          gts[g].class_id != d.class_id)
        continue;
      const double o = oracle_jaccard(d.box, gts[g].box);
      if (o >= iou_threshold && o > best_overlap) {
        best_overlap = o;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      claimed[best] = 1;
      out.is_tp.push_back(1);
      ++out.tp;
    } else {
      out.is_tp.push_back(0);
      ++out.fp;
    }
  }
  out.fn = static_cast<int>(gts.size()) - out.tp;
  return out;
}

// Eleven-point AP by brute force: enumerate every distinct confidence
// threshold, assign TP/FP among the detections at or above it, tabulate
// (recall, max precision), then average max precision over the 11 recalls.
inline double oracle_ap_threshold_enum(const std::vector<Detection>& dets,
                                       const std::vector<GroundTruth>& gts,
                                       double iou_threshold) {
  std::vector<double> thresholds;
  for (const Detection& d : dets) thresholds.push_back(d.score);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  struct Point {
    double recall;
    double precision;
  };
  std::vector<Point> points;
  for (double t : thresholds) {
    std::vector<Detection> kept;
    for (const Detection& d : dets)
      if (d.score >= t) kept.push_back(d);
    const OracleAssignment a = oracle_assign(kept, gts, iou_threshold);
    const double precision =
        (a.tp + a.fp) > 0 ? static_cast<double>(a.tp) / (a.tp + a.fp) : 1.0;
    const double recall =
        (a.tp + a.fn) > 0 ? static_cast<double>(a.tp) / (a.tp + a.fn) : 0.0;
    points.push_back({recall, precision});
  }

  double sum = 0.0;
  for (int i = 0; i <= 10; ++i) {
    const double r = i / 10.0;
    double best = 0.0;
    for (const Point& p : points)
      if (p.recall >= r) best = std::max(best, p.precision);
    sum += best;
  }
  return sum / 11.0;
}

// Random same-class single-image scene with strictly distinct confidences.
struct RandomScene {
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
};

inline RandomScene random_eval_scene(Rng& rng, int max_gt, int max_det,
                                     int num_images = 1) {
  RandomScene scene;
  const int num_gt = rng.uniform_int(max_gt + 1);
  const int num_det = rng.uniform_int(max_det + 1);
  for (int g = 0; g < num_gt; ++g)
    scene.gts.push_back(
        GroundTruth{rng.uniform_int(num_images), 1, random_box(rng)});
  std::vector<double> scores;
  for (int d = 0; d < num_det; ++d)
    scores.push_back((d + 1 + rng.uniform(0.0, 0.9)) / (max_det + 2.0));
  rng.shuffle(scores);  // distinct by construction, order randomized
  for (int d = 0; d < num_det; ++d) {
    Box box;
    if (!scene.gts.empty() && rng.bernoulli(0.6)) {
      // Perturb a ground-truth box so overlaps straddle the threshold.
      const Box& base = scene.gts[rng.uniform_int(num_gt)].box;
      box = base;
      box.cx += rng.uniform(-0.2, 0.2) * base.w;
      box.cy += rng.uniform(-0.2, 0.2) * base.h;
      box.w *= rng.uniform(0.6, 1.5);
      box.h *= rng.uniform(0.6, 1.5);
    } else {
      box = random_box(rng);
    }
    scene.dets.push_back(
        Detection{rng.uniform_int(num_images), 1, box, scores[d]});
  }
  return scene;
}

// Central-difference check of an analytic gradient. `eval` recomputes the
// scalar objective from the current contents of `param`; `grad` is the
// analytic derivative at the starting point. Returns the worst element
// relative error.
inline double check_gradient(std::vector<double>& param,
                             const std::vector<double>& grad,
                             const std::function<double()>& eval,
                             double step = 1e-5) {
  double worst = 0.0;
  for (size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + step;
    const double up = eval();
    param[i] = saved - step;
    const double down = eval();
    param[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, rel_err(numeric, grad[i]));
  }
  return worst;
}

}  // namespace testutil
