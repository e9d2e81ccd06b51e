// SPDX-License-Identifier: Apache-2.0
#include "eqdet/box.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace eqdet {

double jaccard(const Box& a, const Box& b) {
  const double ix = std::min(a.xmax(), b.xmax()) - std::max(a.xmin(), b.xmin());
  const double iy = std::min(a.ymax(), b.ymax()) - std::max(a.ymin(), b.ymin());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

OffsetVector encode_box(const Box& gt, const Box& anchor) {
  if (gt.w <= 0.0 || gt.h <= 0.0)
    throw std::invalid_argument("encode_box: ground-truth box has non-positive size");
  if (anchor.w <= 0.0 || anchor.h <= 0.0)
    throw std::invalid_argument("encode_box: anchor box has non-positive size");
  return OffsetVector{(gt.cx - anchor.cx) / anchor.w,
                      (gt.cy - anchor.cy) / anchor.h,
                      std::log(gt.w / anchor.w),
                      std::log(gt.h / anchor.h)};
}

Box decode_box(const OffsetVector& offset, const Box& anchor) {
  if (anchor.w <= 0.0 || anchor.h <= 0.0)
    throw std::invalid_argument("decode_box: anchor box has non-positive size");
  Box out;
  out.cx = offset[0] * anchor.w + anchor.cx;
  out.cy = offset[1] * anchor.h + anchor.cy;
  out.w = std::exp(offset[2]) * anchor.w;
  out.h = std::exp(offset[3]) * anchor.h;
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& detections,
                           double iou_threshold, int top_k) {
  if (top_k <= 0) throw std::invalid_argument("nms: top_k must be positive");

  // Stable partition by class so suppression never crosses classes.
  std::map<int, std::vector<Detection>> by_class;
  for (const Detection& d : detections) by_class[d.class_id].push_back(d);

  std::vector<Detection> kept;
  for (auto& [cls, dets] : by_class) {
    (void)cls;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) {
                       return a.score > b.score;
                     });
    std::vector<Detection> cls_kept;
    for (const Detection& cand : dets) {
      if (static_cast<int>(cls_kept.size()) >= top_k) break;
      bool suppressed = false;
      for (const Detection& k : cls_kept) {
        if (jaccard(cand.box, k.box) > iou_threshold) {
          suppressed = true;
          break;
        }
      }
      if (!suppressed) cls_kept.push_back(cand);
    }
    kept.insert(kept.end(), cls_kept.begin(), cls_kept.end());
  }

  std::stable_sort(kept.begin(), kept.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  return kept;
}

}  // namespace eqdet
