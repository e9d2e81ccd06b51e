// SPDX-License-Identifier: Apache-2.0
#include "eqdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "eqdet/rng.hpp"
#include "json.hpp"

namespace eqdet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Spec validation and serialization.

void ModelSpec::validate() const {
  if (input_size <= 0)
    throw std::invalid_argument("ModelSpec: input_size must be positive");
  if (input_channels <= 0)
    throw std::invalid_argument("ModelSpec: input_channels must be positive");
  if (num_classes < 2)
    throw std::invalid_argument(
        "ModelSpec: need background plus at least one object class");
  if (!(s_min > 0.0 && s_max > s_min && s_max <= 1.0))
    throw std::invalid_argument("ModelSpec: need 0 < s_min < s_max <= 1");
  if (layers.empty())
    throw std::invalid_argument("ModelSpec: layer list is empty");
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerEntry& e = layers[i];
    const std::string row = "ModelSpec row " + std::to_string(i + 1);
    if (e.stride != 1 && e.stride != 2)
      throw std::invalid_argument(row + ": stride must be 1 or 2");
    if (e.kernel < 1) throw std::invalid_argument(row + ": bad kernel size");
    if (e.in_channels <= 0 || e.out_channels <= 0)
      throw std::invalid_argument(row + ": channel counts must be positive");
    if (e.kind == ConvKind::depthwise && e.in_channels != e.out_channels)
      throw std::invalid_argument(
          row + ": depthwise layers keep their channel count");
    if (e.kind == ConvKind::pointwise && e.kernel != 1)
      throw std::invalid_argument(row + ": pointwise kernel must be 1x1");
    if (e.declared_input <= 0 || e.declared_channels <= 0)
      throw std::invalid_argument(row + ": declared input size missing");
  }
  if (taps.size() < 2)
    throw std::invalid_argument(
        "ModelSpec: need at least two head taps for the anchor pyramid");
  for (size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 0 || taps[i] >= static_cast<int>(layers.size()))
      throw std::invalid_argument("ModelSpec: tap index out of range");
    if (i > 0 && taps[i] <= taps[i - 1])
      throw std::invalid_argument("ModelSpec: taps must strictly increase");
  }
}

namespace {

std::string kind_name(ConvKind kind) {
  switch (kind) {
    case ConvKind::depthwise:
      return "conv_dw";
    default:
      return "conv";  // standard and pointwise share the table's name
  }
}

json spec_to_json_obj(const ModelSpec& spec) {
  json j;
  j["input_size"] = spec.input_size;
  j["input_channels"] = spec.input_channels;
  j["num_classes"] = spec.num_classes;
  j["s_min"] = spec.s_min;
  j["s_max"] = spec.s_max;
  j["layers"] = json::array();
  for (const LayerEntry& e : spec.layers) {
    json row;
    row["type"] = kind_name(e.kind);
    row["stride"] = e.stride;
    if (e.kind == ConvKind::depthwise)
      row["filter"] = {e.kernel, e.kernel, e.in_channels};
    else
      row["filter"] = {e.kernel, e.kernel, e.in_channels, e.out_channels};
    row["input"] = {e.declared_input, e.declared_input, e.declared_channels};
    j["layers"].push_back(row);
  }
  j["taps"] = spec.taps;
  return j;
}

ModelSpec spec_from_json_obj(const json& j) {
  ModelSpec spec;
  try {
    spec.input_size = j.at("input_size").get<int>();
    spec.input_channels = j.value("input_channels", 3);
    spec.num_classes = j.at("num_classes").get<int>();
    spec.s_min = j.value("s_min", 0.2);
    spec.s_max = j.value("s_max", 0.9);
    for (const json& row : j.at("layers")) {
      LayerEntry e;
      const std::string type = row.at("type").get<std::string>();
      e.stride = row.at("stride").get<int>();
      const auto filter = row.at("filter").get<std::vector<int>>();
      const auto input = row.at("input").get<std::vector<int>>();
      if (input.size() != 3 || input[0] != input[1])
        throw std::invalid_argument(
            "model spec: input must be [S, S, C] with square S");
      e.declared_input = input[0];
      e.declared_channels = input[2];
      if (type == "conv_dw") {
        if (filter.size() != 3 || filter[0] != filter[1])
          throw std::invalid_argument(
              "model spec: depthwise filter must be [K, K, M]");
        e.kind = ConvKind::depthwise;
        e.kernel = filter[0];
        e.in_channels = filter[2];
        e.out_channels = filter[2];
      } else if (type == "conv") {
        if (filter.size() != 4 || filter[0] != filter[1])
          throw std::invalid_argument(
              "model spec: conv filter must be [K, K, M, N]");
        e.kernel = filter[0];
        e.in_channels = filter[2];
        e.out_channels = filter[3];
        e.kind = e.kernel == 1 ? ConvKind::pointwise : ConvKind::standard;
      } else {
        throw std::invalid_argument("model spec: unknown layer type " + type);
      }
      spec.layers.push_back(e);
    }
    spec.taps = j.at("taps").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace

std::string model_spec_to_json(const ModelSpec& spec) {
  return spec_to_json_obj(spec).dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model spec: ") + e.what());
  }
  return spec_from_json_obj(j);
}

ModelSpec load_model_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model spec: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return model_spec_from_json(buffer.str());
}

void save_model_spec(const ModelSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model spec: " + path);
  out << spec_to_json_obj(spec).dump(2) << "\n";
}

std::uint64_t spec_hash(const ModelSpec& spec) {
  const std::string text = model_spec_to_json(spec);
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  return hash;
}

// ---------------------------------------------------------------------------
// Shape inference.

ShapeReport infer_shapes(const ModelSpec& spec) {
  spec.validate();
  ShapeReport report;
  int spatial = spec.input_size;
  int channels = spec.input_channels;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerEntry& e = spec.layers[i];
    const std::string row = "row " + std::to_string(i + 1);
    LayerShape ls;
    ls.input_spatial = spatial;
    ls.input_channels = channels;

    if (e.declared_input != spatial || e.declared_channels != channels) {
      ls.declared_match = false;
      report.conflicts.push_back(
          row + ": declared input " + std::to_string(e.declared_input) + "x" +
          std::to_string(e.declared_input) + "x" +
          std::to_string(e.declared_channels) + ", chain computes " +
          std::to_string(spatial) + "x" + std::to_string(spatial) + "x" +
          std::to_string(channels));
    }
    if (e.in_channels != channels)
      report.conflicts.push_back(
          row + ": filter expects " + std::to_string(e.in_channels) +
          " input channels, chain provides " + std::to_string(channels));

    int padding = same_padding(e.kernel);
    int out = conv_output_extent(spatial, e.kernel, e.stride, padding);
    if (i + 1 < spec.layers.size()) {
      const int next_declared = spec.layers[i + 1].declared_input;
      if (next_declared != out && spatial >= e.kernel) {
        const int out_valid =
            conv_output_extent(spatial, e.kernel, e.stride, 0);
        if (out_valid == next_declared && out_valid >= 1) {
          report.resolutions.push_back(
              row + ": zero padding adopted (" + std::to_string(spatial) +
              " -> " + std::to_string(out_valid) +
              " matches the next row's declared input)");
          padding = 0;
          out = out_valid;
        }
      }
    }
    if (out < 1)
      report.conflicts.push_back(row + ": output extent collapses to zero");

    ls.padding = padding;
    ls.output_spatial = out;
    ls.output_channels = e.out_channels;
    report.layers.push_back(ls);
    spatial = out;
    channels = e.out_channels;
  }
  return report;
}

std::string ShapeReport::to_string() const {
  std::ostringstream out;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerShape& ls = layers[i];
    out << "row " << i + 1 << ": " << ls.input_spatial << "x"
        << ls.input_spatial << "x" << ls.input_channels << " -> "
        << ls.output_spatial << "x" << ls.output_spatial << "x"
        << ls.output_channels << " (pad " << ls.padding << ")"
        << (ls.declared_match ? "" : "  [declared input differs]") << "\n";
  }
  for (const std::string& r : resolutions) out << "resolution: " << r << "\n";
  for (const std::string& c : conflicts) out << "conflict: " << c << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Assembly.

namespace {

Tensor4 init_weights(int n, int c, int h, int w, double fan_in, Rng& rng) {
  Tensor4 t(n, c, h, w);
  const double scale = 1.0 / std::sqrt(fan_in);
  for (double& v : t.data) v = rng.normal() * scale;
  return t;
}

ConvSpec trunk_conv_spec(const LayerEntry& e, int padding) {
  ConvSpec spec;
  spec.kind = e.kind;
  spec.kernel_size = e.kernel;
  spec.in_channels = e.in_channels;
  spec.out_channels = e.out_channels;
  spec.stride = e.stride;
  spec.padding = padding;
  spec.validate();
  return spec;
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t init_seed,
                  bool acknowledge_conflicts) {
  spec.validate();
  Model model;
  model.spec = spec;
  model.shapes = infer_shapes(spec);
  if (!model.shapes.clean() && !acknowledge_conflicts)
    throw std::runtime_error("model spec shape conflict: " +
                             model.shapes.conflicts.front());

  Rng rng(init_seed);
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerEntry& e = spec.layers[i];
    ConvLayer layer;
    layer.spec = trunk_conv_spec(e, model.shapes.layers[i].padding);
    switch (e.kind) {
      case ConvKind::standard:
        layer.weights =
            init_weights(e.out_channels, e.in_channels, e.kernel, e.kernel,
                         static_cast<double>(e.kernel) * e.kernel *
                             e.in_channels,
                         rng);
        break;
      case ConvKind::depthwise:
        layer.weights =
            init_weights(e.in_channels, 1, e.kernel, e.kernel,
                         static_cast<double>(e.kernel) * e.kernel, rng);
        break;
      case ConvKind::pointwise:
        layer.weights = init_weights(e.out_channels, e.in_channels, 1, 1,
                                     static_cast<double>(e.in_channels), rng);
        break;
    }
    layer.bn = BnParams::identity(e.out_channels);
    model.layers.push_back(std::move(layer));
  }

  // Head taps must form a coarsening pyramid for the anchor scales.
  std::vector<FeatureMap> maps;
  for (size_t t = 0; t < spec.taps.size(); ++t) {
    const int size = model.shapes.layers[spec.taps[t]].output_spatial;
    if (!maps.empty() && size >= maps.back().size)
      throw std::runtime_error(
          "model spec: tapped feature maps must strictly shrink");
    maps.push_back(FeatureMap{size});
  }
  model.anchors = gen_default_boxes(maps, spec.s_min, spec.s_max);

  const int head_channels = (spec.num_classes + 4) * model.anchors.anchors_per_cell;
  for (size_t t = 0; t < spec.taps.size(); ++t) {
    const int in_ch = model.shapes.layers[spec.taps[t]].output_channels;
    HeadLayer head;
    head.spec.kind = ConvKind::standard;
    head.spec.kernel_size = 3;
    head.spec.in_channels = in_ch;
    head.spec.out_channels = head_channels;
    head.spec.stride = 1;
    head.spec.padding = 1;
    head.spec.validate();
    head.weights = init_weights(head_channels, in_ch, 3, 3,
                                9.0 * in_ch, rng);
    head.bias = Tensor4(1, head_channels, 1, 1);
    head.map_size = maps[t].size;
    model.heads.push_back(std::move(head));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Model methods.

std::vector<Model::ParamRef> Model::parameters() {
  std::vector<ParamRef> refs;
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string base = "layer" + std::to_string(i);
    refs.push_back({&layers[i].weights, base + ".weights"});
    refs.push_back({&layers[i].bn.gamma, base + ".bn_gamma"});
    refs.push_back({&layers[i].bn.beta, base + ".bn_beta"});
  }
  for (size_t h = 0; h < heads.size(); ++h) {
    const std::string base = "head" + std::to_string(h);
    refs.push_back({&heads[h].weights, base + ".weights"});
    refs.push_back({&heads[h].bias, base + ".bias"});
  }
  return refs;
}

std::int64_t Model::trunk_weight_count() const {
  std::int64_t total = 0;
  for (const ConvLayer& layer : layers)
    total += static_cast<std::int64_t>(layer.weights.size());
  return total;
}

std::int64_t Model::parameter_count() const {
  std::int64_t total = 0;
  for (const ConvLayer& layer : layers)
    total += static_cast<std::int64_t>(layer.weights.size()) +
             layer.bn.gamma.size() + layer.bn.beta.size();
  for (const HeadLayer& head : heads)
    total += static_cast<std::int64_t>(head.weights.size()) +
             head.bias.size();
  return total;
}

std::vector<Tensor4> Model::forward_infer(const Tensor4& input) const {
  if (input.c != spec.input_channels || input.h != spec.input_size ||
      input.w != spec.input_size)
    throw std::invalid_argument("forward_infer: input is " + input.shape_str() +
                                ", spec wants " +
                                std::to_string(spec.input_channels) + "x" +
                                std::to_string(spec.input_size) + "x" +
                                std::to_string(spec.input_size));

  std::vector<Tensor4> taps;
  Tensor4 x = input;
  size_t next_tap = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    x = conv2d_forward(x, layers[i].weights, layers[i].spec);
    x = batchnorm_infer(x, layers[i].bn);
    x = relu6(x);
    if (next_tap < spec.taps.size() &&
        spec.taps[next_tap] == static_cast<int>(i)) {
      taps.push_back(x);
      ++next_tap;
    }
  }
  return taps;
}

PredictionSet Model::pack_predictions(
    const std::vector<const Tensor4*>& head_outputs, int image_index) const {
  if (head_outputs.size() != heads.size())
    throw std::invalid_argument(
        "pack_predictions: one tensor per head expected");

  const int nc = spec.num_classes;
  const int per_anchor = nc + 4;
  PredictionSet pred;
  pred.num_anchors = anchors.size();
  pred.num_classes = nc;
  pred.logits.assign(static_cast<size_t>(pred.num_anchors) * nc, 0.0);
  pred.offsets.assign(static_cast<size_t>(pred.num_anchors) * 4, 0.0);

  for (size_t t = 0; t < heads.size(); ++t) {
    const Tensor4& y = *head_outputs[t];
    const int n = heads[t].map_size;
    if (image_index < 0 || image_index >= y.b)
      throw std::invalid_argument("pack_predictions: image index out of range");
    if (y.h != n || y.w != n || y.c != heads[t].spec.out_channels)
      throw std::invalid_argument("pack_predictions: head output is " +
                                  y.shape_str());
    const int base = anchors.map_offsets[t];
    const int k = anchors.anchors_per_cell;
    for (int yy = 0; yy < n; ++yy) {
      for (int xx = 0; xx < n; ++xx) {
        for (int a = 0; a < k; ++a) {
          const int anchor = base + (yy * n + xx) * k + a;
          for (int j = 0; j < nc; ++j)
            pred.logits[static_cast<size_t>(anchor) * nc + j] =
                y.at(image_index, a * per_anchor + j, yy, xx);
          for (int d = 0; d < 4; ++d)
            pred.offsets[static_cast<size_t>(anchor) * 4 + d] =
                y.at(image_index, a * per_anchor + nc + d, yy, xx);
        }
      }
    }
  }
  return pred;
}

PredictionSet Model::predict_raw(const Tensor4& image) const {
  if (image.b != 1)
    throw std::invalid_argument("predict_raw: expects a single image");
  const std::vector<Tensor4> taps = forward_infer(image);

  std::vector<Tensor4> head_out;
  head_out.reserve(heads.size());
  for (size_t t = 0; t < heads.size(); ++t) {
    const HeadLayer& head = heads[t];
    Tensor4 y = conv2d_forward(taps[t], head.weights, head.spec);
    for (int ch = 0; ch < y.c; ++ch) {
      const double b = head.bias.data[ch];
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) y.at(0, ch, yy, xx) += b;
    }
    head_out.push_back(std::move(y));
  }
  std::vector<const Tensor4*> ptrs;
  ptrs.reserve(head_out.size());
  for (const Tensor4& y : head_out) ptrs.push_back(&y);
  return pack_predictions(ptrs, 0);
}

std::vector<Detection> Model::detect(const Tensor4& image,
                                     double conf_threshold, double nms_iou,
                                     int top_k) const {
  if (!(conf_threshold > 0.0 && conf_threshold <= 1.0))
    throw std::invalid_argument("detect: conf_threshold must be in (0, 1]");
  if (!(nms_iou > 0.0 && nms_iou < 1.0))
    throw std::invalid_argument("detect: nms_iou must be in (0, 1)");
  if (top_k <= 0)
    throw std::invalid_argument("detect: top_k must be positive");

  const PredictionSet pred = predict_raw(image);
  const int nc = pred.num_classes;
  std::vector<double> probs(nc);
  std::vector<Detection> candidates;
  for (int a = 0; a < pred.num_anchors; ++a) {
    softmax(&pred.logits[static_cast<size_t>(a) * nc], nc, probs.data());
    OffsetVector offset{pred.offsets[a * 4 + 0], pred.offsets[a * 4 + 1],
                        pred.offsets[a * 4 + 2], pred.offsets[a * 4 + 3]};
    for (int j = 1; j < nc; ++j) {
      if (probs[j] < conf_threshold) continue;
      Detection det;
      det.image_id = 0;
      det.class_id = j;
      det.box = decode_box(offset, anchors.anchors[a].box);
      det.score = probs[j];
      candidates.push_back(det);
    }
  }

  std::vector<Detection> kept = nms(candidates, nms_iou, top_k);
  if (static_cast<int>(kept.size()) > top_k) kept.resize(top_k);
  return kept;
}

// ---------------------------------------------------------------------------
// FP16 weight simulation.

double fp16_round(double value) {
  if (std::isnan(value))
    throw std::invalid_argument("fp16_round: value is NaN");
  if (value == 0.0) return value;
  const double sign = value < 0.0 ? -1.0 : 1.0;
  const double a = std::abs(value);
  if (a > 65504.0) return sign * 65504.0;
  const int e = std::ilogb(a);
  if (e < -14) {
    // Below the normal range: quantum 2^-24 (ties to even via nearbyint).
    return sign * std::ldexp(std::nearbyint(std::ldexp(a, 24)), -24);
  }
  return sign * std::ldexp(std::nearbyint(std::ldexp(a, 10 - e)), e - 10);
}

Fp16Result simulate_fp16(const Model& model) {
  Fp16Result result;
  result.model = model;
  for (Model::ParamRef& ref : result.model.parameters()) {
    for (double& v : ref.tensor->data) {
      if (std::abs(v) > 65504.0) ++result.saturated;
      v = fp16_round(v);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4B435145;  // "EQCK"
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated stream");
}

void write_doubles(std::ostream& out, const std::vector<double>& values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::vector<double>& values) {
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (in.gcount() !=
      static_cast<std::streamsize>(values.size() * sizeof(double)))
    throw std::runtime_error("checkpoint: truncated stream");
}

}  // namespace

void save_checkpoint(const Model& model, const AdamOptimizer* optimizer,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);

  write_pod(out, kCheckpointMagic);
  write_pod(out, kCheckpointVersion);
  const std::string spec_text = model_spec_to_json(model.spec);
  write_pod(out, static_cast<std::uint64_t>(spec_text.size()));
  out.write(spec_text.data(),
            static_cast<std::streamsize>(spec_text.size()));
  write_pod(out, spec_hash(model.spec));

  for (const ConvLayer& layer : model.layers) {
    write_doubles(out, layer.weights.data);
    write_doubles(out, layer.bn.gamma.data);
    write_doubles(out, layer.bn.beta.data);
    write_doubles(out, layer.bn.running_mean);
    write_doubles(out, layer.bn.running_var);
  }
  for (const HeadLayer& head : model.heads) {
    write_doubles(out, head.weights.data);
    write_doubles(out, head.bias.data);
  }

  const std::uint8_t has_optimizer = optimizer != nullptr ? 1 : 0;
  write_pod(out, has_optimizer);
  if (optimizer != nullptr) optimizer->save(out);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path, AdamOptimizer* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);

  std::uint32_t magic = 0;
  std::uint32_t version = 0;
  read_pod(in, magic);
  read_pod(in, version);
  if (magic != kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");

  std::uint64_t spec_len = 0;
  read_pod(in, spec_len);
  std::string spec_text(spec_len, '\0');
  in.read(spec_text.data(), static_cast<std::streamsize>(spec_len));
  if (!in) throw std::runtime_error("checkpoint: truncated stream");
  std::uint64_t stored_hash = 0;
  read_pod(in, stored_hash);

  const ModelSpec spec = model_spec_from_json(spec_text);
  if (spec_hash(spec) != stored_hash)
    throw std::runtime_error("checkpoint: spec hash mismatch");

  // The spec cleared (or was acknowledged past) the shape gate when saved.
  Model model = build_model(spec, 0, /*acknowledge_conflicts=*/true);
  for (ConvLayer& layer : model.layers) {
    read_doubles(in, layer.weights.data);
    read_doubles(in, layer.bn.gamma.data);
    read_doubles(in, layer.bn.beta.data);
    read_doubles(in, layer.bn.running_mean);
    read_doubles(in, layer.bn.running_var);
  }
  for (HeadLayer& head : model.heads) {
    read_doubles(in, head.weights.data);
    read_doubles(in, head.bias.data);
  }

  std::uint8_t has_optimizer = 0;
  read_pod(in, has_optimizer);
  if (optimizer != nullptr) {
    if (!has_optimizer)
      throw std::runtime_error("checkpoint: no optimizer state stored");
    optimizer->load(in);
  }
  return model;
}

}  // namespace eqdet
