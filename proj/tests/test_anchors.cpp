// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "eqdet/anchors.hpp"
#include "eqdet/rng.hpp"
#include "helpers.hpp"

using namespace eqdet;
using namespace testutil;

namespace {
const std::vector<FeatureMap> kSixMaps{{38}, {19}, {10}, {5}, {3}, {1}};
}

TEST_CASE("anchor count follows 6 * sum of squared map sizes") {
  const AnchorSet set = gen_default_boxes(kSixMaps, 0.2, 0.9);
  int cells = 0;
  for (const FeatureMap& m : kSixMaps) cells += m.size * m.size;
  CHECK(cells == 1940);
  CHECK(set.size() == 6 * cells);  // 11640
  CHECK(set.anchors_per_cell == 6);
  REQUIRE(set.map_offsets.size() == kSixMaps.size());
  CHECK(set.map_offsets[0] == 0);
  CHECK(set.map_offsets[1] == 38 * 38 * 6);
}

TEST_CASE("scales interpolate linearly from s_min to s_max") {
  const AnchorSet set = gen_default_boxes(kSixMaps, 0.2, 0.9);
  // Slot 0 is the square box at the map's own scale.
  for (size_t k = 0; k < kSixMaps.size(); ++k) {
    const double expected = 0.2 + (0.9 - 0.2) * static_cast<double>(k) / 5.0;
    const Anchor& a = set.anchors[set.map_offsets[k]];
    CHECK(a.slot == 0);
    CHECK(a.box.w == doctest::Approx(expected));
    CHECK(a.box.h == doctest::Approx(expected));
  }
}

TEST_CASE("slots hold the five aspect ratios plus the extra square") {
  const AnchorSet set = gen_default_boxes({{4}, {2}}, 0.3, 0.6);
  const double s1 = 0.3;
  const double ars[5] = {1.0, 2.0, 3.0, 0.5, 1.0 / 3.0};
  for (int slot = 0; slot < 5; ++slot) {
    const Anchor& a = set.anchors[slot];
    CHECK(a.box.w == doctest::Approx(s1 * std::sqrt(ars[slot])));
    CHECK(a.box.h == doctest::Approx(s1 / std::sqrt(ars[slot])));
    CHECK(a.box.area() == doctest::Approx(s1 * s1));  // scale-preserving
  }
  // Extra box: sqrt(s_k * s_{k+1}); on the last map s_{m+1} = 1.
  CHECK(set.anchors[5].box.w == doctest::Approx(std::sqrt(0.3 * 0.6)));
  const Anchor& last_extra = set.anchors[set.map_offsets[1] + 5];
  CHECK(last_extra.box.w == doctest::Approx(std::sqrt(0.6 * 1.0)));
}

TEST_CASE("centers sit at cell midpoints, row-major cells") {
  const AnchorSet set = gen_default_boxes({{3}, {2}}, 0.2, 0.9);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      for (int slot = 0; slot < 6; ++slot) {
        const Anchor& a = set.anchors[(y * 3 + x) * 6 + slot];
        CHECK(a.cell_y == y);
        CHECK(a.cell_x == x);
        CHECK(a.slot == slot);
        CHECK(a.box.cx == doctest::Approx((x + 0.5) / 3.0));
        CHECK(a.box.cy == doctest::Approx((y + 0.5) / 3.0));
      }
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      const Anchor& a = set.anchors[set.map_offsets[1] + (y * 2 + x) * 6];
      CHECK(a.box.cx == doctest::Approx((x + 0.5) / 2.0));
      CHECK(a.box.cy == doctest::Approx((y + 0.5) / 2.0));
    }
}

TEST_CASE("edge-map anchors may exceed the unit square (unclipped)") {
  const AnchorSet set = gen_default_boxes({{8}, {4}}, 0.5, 0.9);
  bool any_outside = false;
  for (const Anchor& a : set.anchors)
    if (a.box.xmin() < 0.0 || a.box.xmax() > 1.0) any_outside = true;
  CHECK(any_outside);
}

TEST_CASE("invalid pyramid parameters are rejected") {
  CHECK_THROWS_AS(gen_default_boxes({{4}}, 0.2, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(gen_default_boxes({{4}, {2}}, 0.9, 0.2),
                  std::invalid_argument);
  CHECK_THROWS_AS(gen_default_boxes({{4}, {0}}, 0.2, 0.9),
                  std::invalid_argument);
  CHECK_THROWS_AS(gen_default_boxes({{4}, {2}}, 0.0, 0.9),
                  std::invalid_argument);
}

TEST_CASE("matching: anchor at threshold joins, just below stays out") {
  AnchorSet set;
  set.anchors_per_cell = 1;
  set.map_offsets = {0};
  set.anchors.push_back({Box{0.5, 0.5, 0.2, 0.2}, 0, 0, 0, 0});
  const std::vector<GtBox> gt{{Box{0.5, 0.5, 0.2, 0.2}, 1}};
  const MatchResult exact = match_anchors(set, gt, 1.0);
  CHECK(exact.anchor_to_gt[0] == 0);  // jaccard 1.0 >= 1.0

  set.anchors.push_back({Box{0.9, 0.9, 0.05, 0.05}, 0, 0, 1, 0});
  const MatchResult res = match_anchors(set, gt, 0.5);
  CHECK(res.anchor_to_gt[0] == 0);
  CHECK(res.anchor_to_gt[1] == -1);
  CHECK(res.num_matched == 1);
}

TEST_CASE("matching picks the highest-overlap ground truth") {
  AnchorSet set;
  set.anchors_per_cell = 1;
  set.map_offsets = {0};
  set.anchors.push_back({Box{0.5, 0.5, 0.2, 0.2}, 0, 0, 0, 0});
  const std::vector<GtBox> gt{
      {Box{0.55, 0.5, 0.2, 0.2}, 1},  // decent overlap
      {Box{0.5, 0.5, 0.2, 0.2}, 2},   // perfect overlap
  };
  const MatchResult res = match_anchors(set, gt, 0.3);
  CHECK(res.anchor_to_gt[0] == 1);
}

TEST_CASE("every ground truth claims its best anchor even below threshold") {
  AnchorSet set;
  set.anchors_per_cell = 1;
  set.map_offsets = {0};
  set.anchors.push_back({Box{0.3, 0.3, 0.3, 0.3}, 0, 0, 0, 0});
  set.anchors.push_back({Box{0.7, 0.7, 0.3, 0.3}, 0, 0, 1, 0});
  // Tiny box near the second anchor: overlap far below 0.5 everywhere.
  const std::vector<GtBox> gt{{Box{0.72, 0.7, 0.05, 0.05}, 3}};
  const MatchResult res = match_anchors(set, gt, 0.5);
  CHECK(res.anchor_to_gt[0] == -1);
  CHECK(res.anchor_to_gt[1] == 0);
  CHECK(res.num_matched == 1);
}

TEST_CASE("contested forced anchor goes to the higher-overlap ground truth") {
  AnchorSet set;
  set.anchors_per_cell = 1;
  set.map_offsets = {0};
  set.anchors.push_back({Box{0.5, 0.5, 0.2, 0.2}, 0, 0, 0, 0});
  // Both ground truths' best anchor is the single anchor; the second
  // overlaps it more.
  const std::vector<GtBox> gt{
      {Box{0.58, 0.5, 0.2, 0.2}, 1},
      {Box{0.52, 0.5, 0.2, 0.2}, 2},
  };
  const MatchResult res = match_anchors(set, gt, 0.95);
  CHECK(res.anchor_to_gt[0] == 1);
}

namespace {

// Independent restatement of the matching rule: a per-anchor threshold pass,
// then each ground truth's argmax anchor forced, contested anchors going to
// the higher overlap (ties to the earlier ground truth).
std::vector<int> oracle_match(const AnchorSet& set,
                              const std::vector<GtBox>& gt, double threshold) {
  std::vector<int> out(set.size(), -1);
  for (int a = 0; a < set.size(); ++a) {
    double best = threshold;
    for (size_t g = 0; g < gt.size(); ++g) {
      const double o = oracle_jaccard(set.anchors[a].box, gt[g].box);
      if (o > best || (o == best && o >= threshold && out[a] < 0)) {
        best = o;
        out[a] = static_cast<int>(g);
      }
    }
  }
  std::vector<int> best_anchor(gt.size(), -1);
  for (size_t g = 0; g < gt.size(); ++g) {
    double best = -1.0;
    for (int a = 0; a < set.size(); ++a) {
      const double o = oracle_jaccard(set.anchors[a].box, gt[g].box);
      if (o > best) {
        best = o;
        best_anchor[g] = a;
      }
    }
  }
  for (int a = 0; a < set.size(); ++a) {
    int winner = -1;
    double winner_overlap = -1.0;
    for (size_t g = 0; g < gt.size(); ++g) {
      if (best_anchor[g] != a) continue;
      const double o = oracle_jaccard(set.anchors[a].box, gt[g].box);
      if (o > winner_overlap) {
        winner_overlap = o;
        winner = static_cast<int>(g);
      }
    }
    if (winner >= 0) out[a] = winner;
  }
  return out;
}

}  // namespace

TEST_CASE("matching equals an independent oracle on random scenes") {
  Rng rng(404);
  const AnchorSet set = gen_default_boxes({{6}, {3}}, 0.25, 0.75);
  for (int scene = 0; scene < 200; ++scene) {
    std::vector<GtBox> gt;
    const int n = 1 + rng.uniform_int(4);
    for (int g = 0; g < n; ++g)
      gt.push_back({random_box(rng, 0.1), 1 + rng.uniform_int(6)});
    const MatchResult res = match_anchors(set, gt, 0.5);
    REQUIRE(static_cast<int>(res.anchor_to_gt.size()) == set.size());

    const std::vector<int> want = oracle_match(set, gt, 0.5);
    int matched = 0;
    for (int a = 0; a < set.size(); ++a) {
      CHECK(res.anchor_to_gt[a] == want[a]);
      if (res.anchor_to_gt[a] >= 0) ++matched;
    }
    CHECK(matched == res.num_matched);
    CHECK(res.num_matched >= 1);  // the forced pass leaves nobody empty-handed
  }
}
