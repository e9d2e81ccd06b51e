// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqdet/anchors.hpp"
#include "eqdet/box.hpp"
#include "eqdet/loss.hpp"
#include "eqdet/nn.hpp"
#include "eqdet/optim.hpp"
#include "eqdet/tensor.hpp"

namespace eqdet {

// One trunk row: a convolution (standard, depthwise, or pointwise) with its
// declared input size, mirroring the three columns of the layer table.
struct LayerEntry {
  ConvKind kind = ConvKind::standard;
  int stride = 1;
  int kernel = 3;
  int in_channels = 0;
  int out_channels = 0;
  int declared_input = 0;     // declared input side length
  int declared_channels = 0;  // declared input channel count
};

struct ModelSpec {
  int input_size = 0;
  int input_channels = 3;
  int num_classes = 0;  // includes background class 0
  double s_min = 0.2;
  double s_max = 0.9;
  std::vector<LayerEntry> layers;
  std::vector<int> taps;  // layer indices whose outputs feed detection heads

  void validate() const;
};

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);
ModelSpec load_model_spec(const std::string& path);
void save_model_spec(const ModelSpec& spec, const std::string& path);

// FNV-1a over the canonical spec serialization; stored in checkpoints.
std::uint64_t spec_hash(const ModelSpec& spec);

// Shape inference walks the chain, checking each row's declared input and
// choosing per-layer padding. "Same" padding is the default; when the next
// row's declared input instead matches the zero-padding output exactly, that
// padding is adopted and listed as a resolution. Rows whose declared input
// matches neither are conflicts — reported, never silently altered.
struct LayerShape {
  int input_spatial = 0;
  int input_channels = 0;
  int output_spatial = 0;
  int output_channels = 0;
  int padding = 0;
  bool declared_match = true;
};

struct ShapeReport {
  std::vector<LayerShape> layers;
  std::vector<std::string> conflicts;
  std::vector<std::string> resolutions;
  bool clean() const { return conflicts.empty(); }
  std::string to_string() const;
};

ShapeReport infer_shapes(const ModelSpec& spec);

struct ConvLayer {
  ConvSpec spec;
  Tensor4 weights;
  BnParams bn;
};

// Detection head: a 3x3 same-padding convolution with bias (no BN) that maps
// a tapped feature map to (c+4) * anchors-per-cell channels. For the anchor
// at slot a, channels [a*(c+4), (a+1)*(c+4)) hold c class logits then the
// four box offsets.
struct HeadLayer {
  ConvSpec spec;
  Tensor4 weights;
  Tensor4 bias;  // (1, out_channels, 1, 1)
  int map_size = 0;
};

struct Model {
  ModelSpec spec;
  ShapeReport shapes;
  std::vector<ConvLayer> layers;
  std::vector<HeadLayer> heads;
  AnchorSet anchors;

  // Learned-parameter tensors in a fixed enumeration order: per trunk layer
  // weights, BN gamma, BN beta; then per head weights, bias.
  struct ParamRef {
    Tensor4* tensor = nullptr;
    std::string name;
  };
  std::vector<ParamRef> parameters();

  std::int64_t trunk_weight_count() const;  // conv weight elements only
  std::int64_t parameter_count() const;     // all learned parameters

  // Trunk forward in inference mode; returns the tapped feature maps.
  std::vector<Tensor4> forward_infer(const Tensor4& input) const;

  // Head outputs for one image, flattened in the anchor set's order.
  PredictionSet predict_raw(const Tensor4& image) const;

  // Packs one image's slice of (possibly batched) head-output tensors,
  // ordered like `heads`, into a PredictionSet in the anchor set's order.
  PredictionSet pack_predictions(const std::vector<const Tensor4*>& head_outputs,
                                 int image_index) const;

  // softmax -> drop background -> confidence filter -> decode -> per-class
  // NMS -> global top_k. Detections carry image_id 0.
  std::vector<Detection> detect(const Tensor4& image, double conf_threshold,
                                double nms_iou, int top_k) const;
};

// Builds the model, initializing conv weights from a seeded zero-mean normal
// with scale 1/sqrt(fan_in) and BN to identity. Shape conflicts reject the
// build unless acknowledge_conflicts is set.
Model build_model(const ModelSpec& spec, std::uint64_t init_seed,
                  bool acknowledge_conflicts = false);

// Nearest IEEE-754 binary16 neighbor (ties to even), saturating to +/-65504.
double fp16_round(double value);

struct Fp16Result {
  Model model;
  std::int64_t saturated = 0;  // weights clamped at the binary16 range edge
};

// Rounds every learned parameter through binary16 storage; batch-norm running
// statistics and activations stay at full width.
Fp16Result simulate_fp16(const Model& model);

// Versioned binary checkpoint: spec text + hash, every parameter tensor, BN
// running statistics, and (optionally) optimizer state. Loading verifies the
// embedded hash.
void save_checkpoint(const Model& model, const AdamOptimizer* optimizer,
                     const std::string& path);
Model load_checkpoint(const std::string& path,
                      AdamOptimizer* optimizer = nullptr);

}  // namespace eqdet
