// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "eqdet/box.hpp"
#include "eqdet/rng.hpp"
#include "helpers.hpp"

using namespace eqdet;
using namespace testutil;

TEST_CASE("jaccard of identical boxes is 1") {
  const Box b{0.5, 0.5, 0.2, 0.3};
  CHECK(jaccard(b, b) == doctest::Approx(1.0));
}

TEST_CASE("jaccard of disjoint boxes is 0") {
  const Box a{0.2, 0.2, 0.1, 0.1};
  const Box b{0.8, 0.8, 0.1, 0.1};
  CHECK(jaccard(a, b) == 0.0);
}

TEST_CASE("jaccard half-overlap worked case") {
  // Two unit-aspect boxes sharing half their area: intersection 0.5*A,
  // union 1.5*A -> 1/3.
  const Box a = Box::from_corners(0.0, 0.0, 0.2, 0.2);
  const Box b = Box::from_corners(0.1, 0.0, 0.3, 0.2);
  CHECK(jaccard(a, b) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("jaccard of a contained box is the area ratio") {
  const Box outer{0.5, 0.5, 0.4, 0.4};
  const Box inner{0.5, 0.5, 0.2, 0.2};
  CHECK(jaccard(outer, inner) == doctest::Approx(0.25));
}

TEST_CASE("jaccard properties on random boxes") {
  Rng rng(101);
  for (int i = 0; i < 2000; ++i) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    const double j = jaccard(a, b);
    CHECK(j == doctest::Approx(jaccard(b, a)));  // symmetric
    CHECK(j >= 0.0);
    CHECK(j <= 1.0 + 1e-12);
    CHECK(j == doctest::Approx(oracle_jaccard(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("encode of the anchor against itself is zero") {
  const Box anchor{0.4, 0.6, 0.2, 0.1};
  const OffsetVector off = encode_box(anchor, anchor);
  for (double v : off) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("decode of zero offsets returns the anchor") {
  const Box anchor{0.4, 0.6, 0.2, 0.1};
  const Box out = decode_box({0.0, 0.0, 0.0, 0.0}, anchor);
  CHECK(out.cx == doctest::Approx(anchor.cx));
  CHECK(out.cy == doctest::Approx(anchor.cy));
  CHECK(out.w == doctest::Approx(anchor.w));
  CHECK(out.h == doctest::Approx(anchor.h));
}

TEST_CASE("encode matches the hand formula") {
  const Box gt{0.5, 0.5, 0.4, 0.2};
  const Box anchor{0.45, 0.55, 0.2, 0.4};
  const OffsetVector off = encode_box(gt, anchor);
  CHECK(off[0] == doctest::Approx((0.5 - 0.45) / 0.2));
  CHECK(off[1] == doctest::Approx((0.5 - 0.55) / 0.4));
  CHECK(off[2] == doctest::Approx(std::log(0.4 / 0.2)));
  CHECK(off[3] == doctest::Approx(std::log(0.2 / 0.4)));
}

TEST_CASE("encode/decode roundtrip on random pairs") {
  Rng rng(202);
  for (int i = 0; i < 2000; ++i) {
    const Box gt = random_box(rng);
    const Box anchor = random_box(rng);
    const Box back = decode_box(encode_box(gt, anchor), anchor);
    CHECK(std::fabs(back.cx - gt.cx) < 1e-9);
    CHECK(std::fabs(back.cy - gt.cy) < 1e-9);
    CHECK(std::fabs(back.w - gt.w) < 1e-9);
    CHECK(std::fabs(back.h - gt.h) < 1e-9);
  }
}

TEST_CASE("encode/decode reject non-positive sizes") {
  const Box good{0.5, 0.5, 0.2, 0.2};
  const Box flat{0.5, 0.5, 0.0, 0.2};
  CHECK_THROWS_AS(encode_box(good, flat), std::invalid_argument);
  CHECK_THROWS_AS(encode_box(flat, good), std::invalid_argument);
  CHECK_THROWS_AS(decode_box({0, 0, 0, 0}, flat), std::invalid_argument);
}

TEST_CASE("nms keeps the higher-score box of an overlapping pair") {
  std::vector<Detection> dets{
      {0, 1, Box{0.5, 0.5, 0.2, 0.2}, 0.9},
      {0, 1, Box{0.51, 0.5, 0.2, 0.2}, 0.8},
  };
  const auto out = nms(dets, 0.5, 10);
  REQUIRE(out.size() == 1);
  CHECK(out[0].score == doctest::Approx(0.9));
}

TEST_CASE("nms never suppresses across classes") {
  std::vector<Detection> dets{
      {0, 1, Box{0.5, 0.5, 0.2, 0.2}, 0.9},
      {0, 2, Box{0.5, 0.5, 0.2, 0.2}, 0.8},
  };
  CHECK(nms(dets, 0.5, 10).size() == 2);
}

TEST_CASE("nms overlap exactly at the threshold survives") {
  // Suppression requires overlap strictly above the threshold.
  const Box a = Box::from_corners(0.0, 0.0, 0.2, 0.2);
  const Box b = Box::from_corners(0.1, 0.0, 0.3, 0.2);  // IoU = 1/3
  std::vector<Detection> dets{{0, 1, a, 0.9}, {0, 1, b, 0.8}};
  CHECK(nms(dets, 1.0 / 3.0, 10).size() == 2);
  CHECK(nms(dets, 0.33, 10).size() == 1);
}

TEST_CASE("nms top_k caps each class") {
  std::vector<Detection> dets;
  for (int i = 0; i < 6; ++i)
    dets.push_back({0, 1, Box{0.1 + 0.15 * i, 0.5, 0.05, 0.05},
                    0.9 - 0.1 * i});
  const auto out = nms(dets, 0.5, 3);
  CHECK(out.size() == 3);
  CHECK(out[0].score == doctest::Approx(0.9));
}

TEST_CASE("nms rejects non-positive top_k") {
  CHECK_THROWS_AS(nms({}, 0.5, 0), std::invalid_argument);
}

TEST_CASE("nms equals the brute-force oracle on random scenes") {
  Rng rng(303);
  for (int scene = 0; scene < 500; ++scene) {
    std::vector<Detection> dets;
    const int n = rng.uniform_int(25);
    for (int i = 0; i < n; ++i)
      dets.push_back({0, 1 + rng.uniform_int(3), random_box(rng),
                      (i + 1 + rng.uniform(0.0, 0.9)) / (n + 2.0)});
    const double threshold = rng.uniform(0.1, 0.9);
    const int top_k = 1 + rng.uniform_int(6);
    const auto got = nms(dets, threshold, top_k);
    const auto want = oracle_nms(dets, threshold, top_k);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].class_id == want[i].class_id);
      CHECK(got[i].score == doctest::Approx(want[i].score));
      CHECK(got[i].box.cx == doctest::Approx(want[i].box.cx));
    }
  }
}
