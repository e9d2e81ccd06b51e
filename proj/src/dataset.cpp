// SPDX-License-Identifier: Apache-2.0
#include "eqdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "eqdet/rng.hpp"

namespace eqdet {

// ---------------------------------------------------------------------------
// Raster.

Image8::Image8(int w, int h) : width(w), height(h) {
  if (w <= 0 || h <= 0)
    throw std::invalid_argument("Image8: dimensions must be positive");
  data.assign(static_cast<size_t>(w) * h * 3, 0);
}

std::uint8_t& Image8::at(int x, int y, int c) {
  return data[(static_cast<size_t>(y) * width + x) * 3 + c];
}

std::uint8_t Image8::at(int x, int y, int c) const {
  return data[(static_cast<size_t>(y) * width + x) * 3 + c];
}

void write_ppm(const Image8& image, const std::string& path) {
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("write_ppm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image file: " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  if (!out) throw std::runtime_error("short write on image file: " + path);
}

namespace {

// Next header token, skipping whitespace and '#' comment lines.
int next_ppm_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  if (ch == EOF || !std::isdigit(ch))
    throw std::runtime_error("bad image header: " + path);
  long value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    if (value > std::numeric_limits<int>::max())
      throw std::runtime_error("bad image header: " + path);
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(value);
}

}  // namespace

Image8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read image file: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != 'P' || m1 != '6')
    throw std::runtime_error("not a binary pixmap: " + path);
  const int width = next_ppm_int(in, path);
  const int height = next_ppm_int(in, path);
  const int maxval = next_ppm_int(in, path);
  if (width <= 0 || height <= 0 || maxval != 255)
    throw std::runtime_error("unsupported pixmap geometry: " + path);
  in.get();  // single whitespace before the raster
  Image8 image(width, height);
  in.read(reinterpret_cast<char*>(image.data.data()),
          static_cast<std::streamsize>(image.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.data.size()))
    throw std::runtime_error("truncated pixmap: " + path);
  return image;
}

Tensor4 image_to_tensor(const Image8& image) {
  Tensor4 t(1, 3, image.height, image.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        t.at(0, c, y, x) = image.at(x, y, c) / 255.0;
  return t;
}

// ---------------------------------------------------------------------------
// Splitting.

void SplitSpec::validate() const {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("SplitSpec: test_fraction must be in (0, 1)");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("SplitSpec: val_fraction must be in (0, 1)");
}

SplitCounts split_counts(int total, const SplitSpec& spec) {
  spec.validate();
  if (total < 3)
    throw std::invalid_argument(
        "split_counts: need at least three items per class");
  const auto nearest = [](double x) {
    return static_cast<int>(std::floor(x + 0.5));
  };
  SplitCounts c;
  c.test = nearest(spec.test_fraction * total);
  c.val = nearest(spec.val_fraction * (total - c.test));
  c.train = total - c.test - c.val;
  return c;
}

SplitResult split_dataset(
    const std::vector<std::vector<LabeledImage>>& per_class,
    const SplitSpec& spec) {
  spec.validate();
  SplitResult result;
  for (size_t k = 0; k < per_class.size(); ++k) {
    const std::vector<LabeledImage>& items = per_class[k];
    const int total = static_cast<int>(items.size());
    if (total < 3)
      throw std::invalid_argument(
          "split_dataset: class " + std::to_string(k) +
          " holds fewer than three items");
    const SplitCounts counts = split_counts(total, spec);

    std::vector<int> order(items.size());
    for (int i = 0; i < total; ++i) order[i] = i;
    Rng rng(derive_seed(spec.seed, k));
    rng.shuffle(order);

    for (int i = 0; i < total; ++i) {
      const LabeledImage& item = items[order[i]];
      if (i < counts.test)
        result.test.push_back(item);
      else if (i < counts.test + counts.val)
        result.val.push_back(item);
      else
        result.train.push_back(item);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic scenes.

void SceneSpec::validate() const {
  if (image_size < 16)
    throw std::invalid_argument("SceneSpec: image_size must be >= 16");
  if (num_classes < 1 || num_classes > 6)
    throw std::invalid_argument("SceneSpec: num_classes must be in [1, 6]");
  if (min_objects < 1 || max_objects < min_objects)
    throw std::invalid_argument("SceneSpec: bad objects-per-image range");
  if (clutter_density < 0.0)
    throw std::invalid_argument("SceneSpec: clutter_density must be >= 0");
  if (occlusion_probability < 0.0 || occlusion_probability > 1.0)
    throw std::invalid_argument(
        "SceneSpec: occlusion_probability must be in [0, 1]");
  if (!(scale_min > 0.0 && scale_max >= scale_min && scale_max <= 0.9))
    throw std::invalid_argument(
        "SceneSpec: need 0 < scale_min <= scale_max <= 0.9");
}

namespace {

struct Color {
  std::uint8_t r, g, b;
};

// One bright base color per shape class (index 0..5); the brightest channel
// stays >= 80 after jitter so object pixels are separable from background,
// clutter, and occluders (all kept below 80).
constexpr Color kPalette[6] = {{220, 60, 60}, {60, 210, 60},  {80, 110, 230},
                               {235, 200, 50}, {210, 70, 210}, {70, 210, 210}};

// Is local point (u, v) in [-1,1]^2 inside shape `kind`? `p` is a per-object
// shape parameter (ring thickness, cross arm width, ...).
bool inside_shape(int kind, double u, double v, double p) {
  switch (kind) {
    case 0:  // rectangle
      return true;
    case 1:  // ellipse
      return u * u + v * v <= 1.0;
    case 2:  // triangle, apex up
      return std::abs(u) <= 0.5 * (v + 1.0);
    case 3: {  // ring
      const double r = std::sqrt(u * u + v * v);
      return r <= 1.0 && r >= p;
    }
    case 4:  // cross
      return std::abs(u) <= p || std::abs(v) <= p;
    default:  // diamond
      return std::abs(u) + std::abs(v) <= 1.0;
  }
}

struct PaintBounds {
  int min_x = std::numeric_limits<int>::max();
  int min_y = std::numeric_limits<int>::max();
  int max_x = -1;
  int max_y = -1;
  bool any() const { return max_x >= 0; }
};

PaintBounds paint_shape(Image8& image, int kind, int x0, int y0, int w_px,
                        int h_px, Color color, double shape_param) {
  PaintBounds bounds;
  for (int y = y0; y < y0 + h_px; ++y) {
    for (int x = x0; x < x0 + w_px; ++x) {
      const double u = (x + 0.5 - (x0 + 0.5 * w_px)) / (0.5 * w_px);
      const double v = (y + 0.5 - (y0 + 0.5 * h_px)) / (0.5 * h_px);
      if (!inside_shape(kind, u, v, shape_param)) continue;
      image.at(x, y, 0) = color.r;
      image.at(x, y, 1) = color.g;
      image.at(x, y, 2) = color.b;
      bounds.min_x = std::min(bounds.min_x, x);
      bounds.min_y = std::min(bounds.min_y, y);
      bounds.max_x = std::max(bounds.max_x, x);
      bounds.max_y = std::max(bounds.max_y, y);
    }
  }
  return bounds;
}

std::uint8_t clamp_u8(int v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

double shape_param_for(int kind, Rng& rng) {
  if (kind == 3) return rng.uniform(0.4, 0.6);   // ring inner radius
  if (kind == 4) return rng.uniform(0.25, 0.4);  // cross arm half-width
  return 0.0;
}

}  // namespace

SyntheticImage generate_scene(const SceneSpec& spec, int index) {
  spec.validate();
  if (index < 0)
    throw std::invalid_argument("generate_scene: index must be >= 0");
  const int size = spec.image_size;
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));

  SyntheticImage out;
  out.raster = Image8(size, size);
  out.label.id = index;
  char name[32];
  std::snprintf(name, sizeof(name), "img_%06d.ppm", index);
  out.label.image_path = name;

  // Background: dark gray with per-pixel gray noise.
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int shade = 40 + static_cast<int>(rng.uniform_int(17)) - 8;
      for (int c = 0; c < 3; ++c)
        out.raster.at(x, y, c) = clamp_u8(shade);
    }
  }

  // Distractor clutter, painted under the objects, in muted colors.
  int n_clutter = static_cast<int>(std::floor(spec.clutter_density));
  if (rng.uniform() < spec.clutter_density - n_clutter) ++n_clutter;
  for (int i = 0; i < n_clutter; ++i) {
    const int kind = static_cast<int>(rng.uniform_int(6));
    const double s = rng.uniform(0.05, 0.15);
    const int w_px = std::max(3, static_cast<int>(std::lround(s * size)));
    const int h_px = std::max(
        3, static_cast<int>(std::lround(s * size * rng.uniform(0.7, 1.4))));
    if (w_px >= size || h_px >= size) continue;
    const int x0 = static_cast<int>(rng.uniform_int(size - w_px + 1));
    const int y0 = static_cast<int>(rng.uniform_int(size - h_px + 1));
    const Color muted{clamp_u8(25 + static_cast<int>(rng.uniform_int(46))),
                      clamp_u8(25 + static_cast<int>(rng.uniform_int(46))),
                      clamp_u8(25 + static_cast<int>(rng.uniform_int(46)))};
    paint_shape(out.raster, kind, x0, y0, w_px, h_px, muted,
                shape_param_for(kind, rng));
  }

  // Objects. The first one carries the image's round-robin class.
  const int n_objects =
      spec.min_objects +
      static_cast<int>(rng.uniform_int(spec.max_objects - spec.min_objects + 1));
  for (int obj = 0; obj < n_objects; ++obj) {
    const int class_id =
        obj == 0 ? 1 + index % spec.num_classes
                 : 1 + static_cast<int>(rng.uniform_int(spec.num_classes));
    const int kind = class_id - 1;

    // Scale and aspect (viewpoint proxy).
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      const double s = rng.uniform(spec.scale_min, spec.scale_max);
      const double aspect = std::exp(rng.uniform(-0.45, 0.45));
      int w_px = static_cast<int>(std::lround(s * size * std::sqrt(aspect)));
      int h_px = static_cast<int>(std::lround(s * size / std::sqrt(aspect)));
      w_px = std::clamp(w_px, 6, size - 2);
      h_px = std::clamp(h_px, 6, size - 2);
      const int x0 = 1 + static_cast<int>(rng.uniform_int(size - w_px - 1));
      const int y0 = 1 + static_cast<int>(rng.uniform_int(size - h_px - 1));

      // Keep distinct objects mostly apart; 0.25 on the nominal outline
      // leaves slack under the 0.3 bound on recorded (painted) boxes.
      const Box nominal = Box::from_corners(
          static_cast<double>(x0) / size, static_cast<double>(y0) / size,
          static_cast<double>(x0 + w_px) / size,
          static_cast<double>(y0 + h_px) / size);
      bool clash = false;
      for (const LabeledBox& existing : out.label.boxes)
        if (jaccard(nominal, existing.box) > 0.25) {
          clash = true;
          break;
        }
      if (clash) continue;

      // Color jitter around the class base (intra-class variation).
      const Color base = kPalette[kind];
      const Color color{
          clamp_u8(base.r + static_cast<int>(rng.uniform_int(81)) - 40),
          clamp_u8(base.g + static_cast<int>(rng.uniform_int(81)) - 40),
          clamp_u8(base.b + static_cast<int>(rng.uniform_int(81)) - 40)};

      const PaintBounds bounds =
          paint_shape(out.raster, kind, x0, y0, w_px, h_px, color,
                      shape_param_for(kind, rng));
      if (!bounds.any()) continue;

      // Optional partial occlusion: a muted bar across the object, painted
      // after it so the recorded box keeps the full extent.
      if (rng.uniform() < spec.occlusion_probability) {
        const bool horizontal = rng.uniform() < 0.5;
        const double frac = rng.uniform(0.2, 0.4);
        const int shade = 35 + static_cast<int>(rng.uniform_int(21));
        const Color bar{clamp_u8(shade), clamp_u8(shade), clamp_u8(shade)};
        if (horizontal) {
          const int bh = std::max(1, static_cast<int>(std::lround(frac * h_px)));
          const int by =
              y0 + static_cast<int>(rng.uniform_int(std::max(1, h_px - bh)));
          paint_shape(out.raster, 0, x0, by, w_px, bh, bar, 0.0);
        } else {
          const int bw = std::max(1, static_cast<int>(std::lround(frac * w_px)));
          const int bx =
              x0 + static_cast<int>(rng.uniform_int(std::max(1, w_px - bw)));
          paint_shape(out.raster, 0, bx, y0, bw, h_px, bar, 0.0);
        }
      }

      LabeledBox lb;
      lb.class_id = class_id;
      lb.box = Box::from_corners(static_cast<double>(bounds.min_x) / size,
                                 static_cast<double>(bounds.min_y) / size,
                                 static_cast<double>(bounds.max_x + 1) / size,
                                 static_cast<double>(bounds.max_y + 1) / size);
      out.label.boxes.push_back(lb);
      placed = true;
    }
  }
  return out;
}

std::vector<SyntheticImage> generate_synthetic(const SceneSpec& spec,
                                               int count) {
  spec.validate();
  if (count < 0)
    throw std::invalid_argument("generate_synthetic: count must be >= 0");
  std::vector<SyntheticImage> images;
  images.reserve(count);
  for (int i = 0; i < count; ++i) images.push_back(generate_scene(spec, i));
  return images;
}

// ---------------------------------------------------------------------------
// Annotation and detection files.

namespace {

[[noreturn]] void record_error(const std::string& path, int line,
                               const std::string& message) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + message);
}

// Strips '#' comments; returns false for blank lines.
bool prepare_line(std::string& line) {
  const size_t hash = line.find('#');
  if (hash != std::string::npos) line.erase(hash);
  return line.find_first_not_of(" \t\r\n") != std::string::npos;
}

Box parse_box_fields(double xmin, double ymin, double xmax, double ymax,
                     const std::string& path, int line_no) {
  if (!std::isfinite(xmin) || !std::isfinite(ymin) || !std::isfinite(xmax) ||
      !std::isfinite(ymax))
    record_error(path, line_no, "non-finite coordinate");
  if (xmax <= xmin)
    record_error(path, line_no, "xmax must exceed xmin");
  if (ymax <= ymin)
    record_error(path, line_no, "ymax must exceed ymin");
  return Box::from_corners(xmin, ymin, xmax, ymax);
}

}  // namespace

std::vector<LabeledImage> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read annotation file: " + path);

  std::vector<LabeledImage> items;
  std::map<std::string, size_t> index_of;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!prepare_line(line)) continue;
    std::istringstream fields(line);
    std::string image_path;
    int class_id = 0;
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    if (!(fields >> image_path >> class_id >> xmin >> ymin >> xmax >> ymax))
      record_error(path, line_no, "expected: path class xmin ymin xmax ymax");
    std::string extra;
    if (fields >> extra)
      record_error(path, line_no, "unexpected trailing field");
    if (class_id < 1) record_error(path, line_no, "class id must be >= 1");
    const Box box = parse_box_fields(xmin, ymin, xmax, ymax, path, line_no);

    auto it = index_of.find(image_path);
    if (it == index_of.end()) {
      LabeledImage li;
      li.id = static_cast<int>(items.size());
      li.image_path = image_path;
      it = index_of.emplace(image_path, items.size()).first;
      items.push_back(std::move(li));
    }
    items[it->second].boxes.push_back(LabeledBox{class_id, box});
  }
  return items;
}

void write_annotations(const std::vector<LabeledImage>& items,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write annotation file: " + path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const LabeledImage& item : items)
    for (const LabeledBox& lb : item.boxes)
      out << item.image_path << " " << lb.class_id << " " << lb.box.xmin()
          << " " << lb.box.ymin() << " " << lb.box.xmax() << " "
          << lb.box.ymax() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<DetectionRecord> read_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read detection file: " + path);

  std::vector<DetectionRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!prepare_line(line)) continue;
    std::istringstream fields(line);
    DetectionRecord rec;
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    if (!(fields >> rec.image_path >> rec.class_id >> xmin >> ymin >> xmax >>
          ymax >> rec.score))
      record_error(path, line_no,
                   "expected: path class xmin ymin xmax ymax score");
    std::string extra;
    if (fields >> extra)
      record_error(path, line_no, "unexpected trailing field");
    if (rec.class_id < 1) record_error(path, line_no, "class id must be >= 1");
    rec.box = parse_box_fields(xmin, ymin, xmax, ymax, path, line_no);
    if (!std::isfinite(rec.score) || rec.score < 0.0 || rec.score > 1.0)
      record_error(path, line_no, "score must lie in [0, 1]");
    records.push_back(std::move(rec));
  }
  return records;
}

void write_detections(const std::vector<DetectionRecord>& records,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write detection file: " + path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const DetectionRecord& rec : records)
    out << rec.image_path << " " << rec.class_id << " " << rec.box.xmin()
        << " " << rec.box.ymin() << " " << rec.box.xmax() << " "
        << rec.box.ymax() << " " << rec.score << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace eqdet
