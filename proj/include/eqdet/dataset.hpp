// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqdet/box.hpp"
#include "eqdet/tensor.hpp"

namespace eqdet {

struct LabeledBox {
  int class_id = 0;  // 1-based object class
  Box box;           // normalized coordinates
};

struct LabeledImage {
  int id = 0;
  std::string image_path;
  std::vector<LabeledBox> boxes;
};

// 8-bit RGB raster, row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // size = width * height * 3

  Image8() = default;
  Image8(int w, int h);
  std::uint8_t& at(int x, int y, int c);
  std::uint8_t at(int x, int y, int c) const;
};

// Binary (P6) portable pixmap, maxval 255; '#' header comments tolerated.
void write_ppm(const Image8& image, const std::string& path);
Image8 read_ppm(const std::string& path);

// (1, 3, H, W) tensor with channel values scaled to [0, 1].
Tensor4 image_to_tensor(const Image8& image);

// ---------------------------------------------------------------------------
// Stratified splitting.

struct SplitSpec {
  double test_fraction = 0.2;  // of the full set
  double val_fraction = 0.2;   // of what remains after the test cut
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

// Per-class rule: test = nearest-int(test_fraction * T), then
// val = nearest-int(val_fraction * (T - test)), train = the rest.
// Halves round up.
SplitCounts split_counts(int total, const SplitSpec& spec);

struct SplitResult {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  std::vector<LabeledImage> test;
};

// Applies the rule independently to each class list; membership comes from a
// seeded shuffle (one derived seed per class position). Classes with fewer
// than three items cannot populate three splits and are rejected.
SplitResult split_dataset(const std::vector<std::vector<LabeledImage>>& per_class,
                          const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic scenes: parametric shape classes on a noisy background with
// distractor clutter, scale/aspect/color variation, and optional occlusion.

struct SceneSpec {
  int image_size = 96;
  int num_classes = 6;  // 1..6 distinguishable shape classes
  int min_objects = 1;
  int max_objects = 3;
  double clutter_density = 4.0;       // expected distractor count per image
  double occlusion_probability = 0.25;  // chance an object is partly covered
  double scale_min = 0.2;  // object extent as a fraction of the image side
  double scale_max = 0.65;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticImage {
  Image8 raster;
  LabeledImage label;  // boxes are the tightest bounds of painted pixels
};

// Scene for one image index; depends only on (spec, index).
SyntheticImage generate_scene(const SceneSpec& spec, int index);

// The first object of image i gets class 1 + (i mod num_classes), so class
// counts stay balanced and per-class stratification is exact; extra objects
// draw their class uniformly.
std::vector<SyntheticImage> generate_synthetic(const SceneSpec& spec,
                                               int count);

// ---------------------------------------------------------------------------
// Annotation files: one box per line,
//   image_path class_id xmin ymin xmax ymax
// in normalized decimals; '#' starts a comment; detection files append score.

std::vector<LabeledImage> read_annotations(const std::string& path);
void write_annotations(const std::vector<LabeledImage>& items,
                       const std::string& path);

struct DetectionRecord {
  std::string image_path;
  int class_id = 0;
  Box box;
  double score = 0.0;
};

std::vector<DetectionRecord> read_detections(const std::string& path);
void write_detections(const std::vector<DetectionRecord>& records,
                      const std::string& path);

}  // namespace eqdet
