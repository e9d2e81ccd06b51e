// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "eqdet/box.hpp"

namespace eqdet {

// Square feature map tapped for detection, given by its side length in cells.
struct FeatureMap {
  int size = 0;
};

struct Anchor {
  Box box;
  int map_index = 0;  // which feature map this anchor belongs to
  int cell_y = 0;
  int cell_x = 0;
  int slot = 0;  // 0..5: aspect ratios {1, 2, 3, 1/2, 1/3} then the extra box
};

struct AnchorSet {
  std::vector<Anchor> anchors;
  std::vector<int> map_offsets;  // flat index of each map's first anchor
  int anchors_per_cell = 0;

  int size() const { return static_cast<int>(anchors.size()); }
};

// Default boxes over a pyramid of square feature maps. Map k (1-based) gets
// scale s_k = s_min + (s_max - s_min) * (k - 1) / (m - 1); each cell holds
// boxes of that scale at aspect ratios {1, 2, 3, 1/2, 1/3} plus one extra
// square box of scale sqrt(s_k * s_{k+1}) where s_{m+1} = 1. Centers sit at
// ((i + 0.5) / size, (j + 0.5) / size). Boxes are left unclipped.
AnchorSet gen_default_boxes(const std::vector<FeatureMap>& maps, double s_min,
                            double s_max);

struct GtBox {
  Box box;
  int class_id = 0;  // 1-based object class; 0 is reserved for background
};

struct MatchResult {
  // For each anchor: index into the ground-truth list, or -1 for background.
  std::vector<int> anchor_to_gt;
  int num_matched = 0;  // anchors with a ground-truth assignment
};

// Anchors with jaccard >= threshold to a ground-truth box are matched to the
// overlapping box with the highest jaccard; additionally each ground-truth box
// claims its single best anchor even below the threshold. Ties break toward
// the lower index (anchor or ground-truth).
MatchResult match_anchors(const AnchorSet& anchors,
                          const std::vector<GtBox>& gt, double threshold);

}  // namespace eqdet
