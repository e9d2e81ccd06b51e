// SPDX-License-Identifier: Apache-2.0
#include "eqdet/anchors.hpp"

#include <cmath>
#include <stdexcept>

namespace eqdet {

AnchorSet gen_default_boxes(const std::vector<FeatureMap>& maps, double s_min,
                            double s_max) {
  const int m = static_cast<int>(maps.size());
  if (m < 2)
    throw std::invalid_argument(
        "gen_default_boxes: need at least two feature maps");
  if (!(s_min > 0.0) || !(s_max > s_min))
    throw std::invalid_argument(
        "gen_default_boxes: require 0 < s_min < s_max");
  for (const FeatureMap& f : maps)
    if (f.size <= 0)
      throw std::invalid_argument(
          "gen_default_boxes: feature map size must be positive");

  const double aspect_ratios[5] = {1.0, 2.0, 3.0, 0.5, 1.0 / 3.0};

  auto scale_at = [&](int k) {  // k is 1-based; k == m + 1 means scale 1
    if (k > m) return 1.0;
    return s_min + (s_max - s_min) * (k - 1) / (m - 1);
  };

  AnchorSet set;
  set.anchors_per_cell = 6;
  for (int k = 1; k <= m; ++k) {
    set.map_offsets.push_back(static_cast<int>(set.anchors.size()));
    const int n = maps[k - 1].size;
    const double s_k = scale_at(k);
    const double s_extra = std::sqrt(s_k * scale_at(k + 1));
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double cx = (x + 0.5) / n;
        const double cy = (y + 0.5) / n;
        for (int slot = 0; slot < 6; ++slot) {
          Anchor a;
          a.map_index = k - 1;
          a.cell_y = y;
          a.cell_x = x;
          a.slot = slot;
          a.box.cx = cx;
          a.box.cy = cy;
          if (slot < 5) {
            const double root = std::sqrt(aspect_ratios[slot]);
            a.box.w = s_k * root;
            a.box.h = s_k / root;
          } else {
            a.box.w = s_extra;
            a.box.h = s_extra;
          }
          set.anchors.push_back(a);
        }
      }
    }
  }
  return set;
}

MatchResult match_anchors(const AnchorSet& anchors,
                          const std::vector<GtBox>& gt, double threshold) {
  const int na = anchors.size();
  const int ng = static_cast<int>(gt.size());
  MatchResult result;
  result.anchor_to_gt.assign(na, -1);
  if (ng == 0) return result;

  // Threshold pass: each anchor takes the ground-truth box it overlaps most
  // (strictly-greater comparison keeps ties at the lower index).
  std::vector<double> best_overlap(na, 0.0);
  std::vector<int> best_gt(na, -1);
  for (int a = 0; a < na; ++a) {
    for (int g = 0; g < ng; ++g) {
      const double ov = jaccard(anchors.anchors[a].box, gt[g].box);
      if (ov > best_overlap[a]) {
        best_overlap[a] = ov;
        best_gt[a] = g;
      }
    }
    if (best_gt[a] >= 0 && best_overlap[a] >= threshold)
      result.anchor_to_gt[a] = best_gt[a];
  }

  // Forced pass: every ground-truth box claims its best anchor, threshold or
  // not. If two boxes want the same anchor the higher overlap wins; equal
  // overlaps leave the earlier (lower-index) box in place.
  std::vector<double> forced_overlap(na, -1.0);
  for (int g = 0; g < ng; ++g) {
    int best_a = -1;
    double best = -1.0;
    for (int a = 0; a < na; ++a) {
      const double ov = jaccard(anchors.anchors[a].box, gt[g].box);
      if (ov > best) {
        best = ov;
        best_a = a;
      }
    }
    if (best_a >= 0 && best > forced_overlap[best_a]) {
      forced_overlap[best_a] = best;
      result.anchor_to_gt[best_a] = g;
    }
  }

  for (int a = 0; a < na; ++a)
    if (result.anchor_to_gt[a] >= 0) ++result.num_matched;
  return result;
}

}  // namespace eqdet
