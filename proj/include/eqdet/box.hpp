// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

namespace eqdet {

// Axis-aligned rectangle in normalized image coordinates, stored in
// center/size form with corner accessors.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double xmin() const { return cx - 0.5 * w; }
  double ymin() const { return cy - 0.5 * h; }
  double xmax() const { return cx + 0.5 * w; }
  double ymax() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double xmin, double ymin, double xmax, double ymax) {
    return Box{0.5 * (xmin + xmax), 0.5 * (ymin + ymax), xmax - xmin,
               ymax - ymin};
  }
};

// Area of overlap / area of union; 0 for disjoint boxes, 1 for identical.
double jaccard(const Box& a, const Box& b);

// (g_cx, g_cy, g_w, g_h) offsets of a box relative to a default box.
using OffsetVector = std::array<double, 4>;

OffsetVector encode_box(const Box& gt, const Box& anchor);
Box decode_box(const OffsetVector& offset, const Box& anchor);

struct Detection {
  int image_id = 0;
  int class_id = 0;
  Box box;
  double score = 0.0;
};

// Greedy per-class non-maximum suppression: keep the highest-score box,
// drop boxes with jaccard > iou_threshold to any kept same-class box,
// at most top_k survivors per class. Output is sorted by descending score.
std::vector<Detection> nms(const std::vector<Detection>& detections,
                           double iou_threshold, int top_k);

}  // namespace eqdet
