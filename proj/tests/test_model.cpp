// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "eqdet/model.hpp"
#include "eqdet/rng.hpp"
#include "helpers.hpp"

using namespace eqdet;
using namespace testutil;

#ifndef EQDET_SOURCE_DIR
#define EQDET_SOURCE_DIR "."
#endif

namespace {

const std::string kRepoRoot = EQDET_SOURCE_DIR;

// Small two-map model used across the tests: 8x8 input, taps at 4x4 and 2x2.
ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.input_size = 8;
  spec.input_channels = 3;
  spec.num_classes = 3;  // background + 2 object classes
  spec.s_min = 0.3;
  spec.s_max = 0.8;
  LayerEntry conv;
  conv.kind = ConvKind::standard;
  conv.stride = 2;
  conv.kernel = 3;
  conv.in_channels = 3;
  conv.out_channels = 4;
  conv.declared_input = 8;
  conv.declared_channels = 3;
  spec.layers.push_back(conv);  // 8 -> 4
  LayerEntry dw;
  dw.kind = ConvKind::depthwise;
  dw.stride = 2;
  dw.kernel = 3;
  dw.in_channels = 4;
  dw.out_channels = 4;
  dw.declared_input = 4;
  dw.declared_channels = 4;
  spec.layers.push_back(dw);  // 4 -> 2
  LayerEntry pw;
  pw.kind = ConvKind::pointwise;
  pw.stride = 1;
  pw.kernel = 1;
  pw.in_channels = 4;
  pw.out_channels = 6;
  pw.declared_input = 2;
  pw.declared_channels = 4;
  spec.layers.push_back(pw);  // 2 -> 2
  spec.taps = {0, 2};
  return spec;
}

}  // namespace

TEST_CASE("model spec JSON round-trip preserves every field") {
  const ModelSpec spec = tiny_spec();
  const std::string text = model_spec_to_json(spec);
  const ModelSpec back = model_spec_from_json(text);
  CHECK(back.input_size == spec.input_size);
  CHECK(back.num_classes == spec.num_classes);
  CHECK(back.s_min == spec.s_min);
  CHECK(back.s_max == spec.s_max);
  REQUIRE(back.layers.size() == spec.layers.size());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    CHECK(back.layers[i].kind == spec.layers[i].kind);
    CHECK(back.layers[i].stride == spec.layers[i].stride);
    CHECK(back.layers[i].kernel == spec.layers[i].kernel);
    CHECK(back.layers[i].in_channels == spec.layers[i].in_channels);
    CHECK(back.layers[i].out_channels == spec.layers[i].out_channels);
    CHECK(back.layers[i].declared_input == spec.layers[i].declared_input);
  }
  CHECK(back.taps == spec.taps);
  CHECK(spec_hash(back) == spec_hash(spec));
}

TEST_CASE("spec hash is stable across runs and sensitive to edits") {
  const ModelSpec spec = tiny_spec();
  const std::uint64_t h = spec_hash(spec);
  CHECK(h == spec_hash(tiny_spec()));
  ModelSpec edited = tiny_spec();
  edited.layers[1].stride = 1;
  CHECK(spec_hash(edited) != h);
  edited = tiny_spec();
  edited.s_min = 0.31;
  CHECK(spec_hash(edited) != h);
}

TEST_CASE("bundled deep model: shapes resolve with one padding exception") {
  const ModelSpec spec = load_model_spec(kRepoRoot + "/data/mobilenet_ssd_300.json");
  REQUIRE(spec.layers.size() == 27);
  CHECK(spec.input_size == 300);
  CHECK(spec.num_classes == 7);
  const ShapeReport report = infer_shapes(spec);
  REQUIRE(report.layers.size() == 27);
  CHECK(report.clean());
  REQUIRE(report.resolutions.size() == 1);
  CHECK(report.resolutions[0].find("row 25") != std::string::npos);

  // Spatial chain: the strided rows halve, the valid-padding row drops 3->1.
  const int want_spatial[28] = {300, 150, 150, 150, 75, 75, 75, 75, 38, 38,
                                38,  38,  38,  38,  38, 38, 19, 19, 19, 10,
                                10,  5,   5,   3,   3,  1,  1,  1};
  for (int i = 0; i < 27; ++i) {
    CHECK(report.layers[i].input_spatial == want_spatial[i]);
    CHECK(report.layers[i].output_spatial == want_spatial[i + 1]);
  }
  // Every row's declared input matches the chain; the resolution concerns
  // row 25's padding choice, not its declared input.
  for (int i = 0; i < 27; ++i) CHECK(report.layers[i].declared_match);
  CHECK(report.layers[24].padding == 0);  // the resolved valid-padding row
  for (int i = 0; i < 27; ++i)
    if (i != 24) CHECK(report.layers[i].padding == same_padding(spec.layers[i].kernel));
}

TEST_CASE("bundled deep model: tap sizes and anchor total") {
  const ModelSpec spec = load_model_spec(kRepoRoot + "/data/mobilenet_ssd_300.json");
  CHECK(spec.taps == std::vector<int>{14, 16, 18, 20, 22, 26});
  const ShapeReport report = infer_shapes(spec);
  const int want_maps[6] = {38, 19, 10, 5, 3, 1};
  int cells = 0;
  for (int i = 0; i < 6; ++i) {
    CHECK(report.layers[spec.taps[i]].output_spatial == want_maps[i]);
    cells += want_maps[i] * want_maps[i];
  }
  CHECK(cells == 1940);
  const Model model = build_model(spec, 1);
  CHECK(model.anchors.size() == 11640);  // 1940 cells * 6 anchors
}

TEST_CASE("a declared-input mismatch is a conflict that blocks the build") {
  ModelSpec spec = tiny_spec();
  spec.layers[1].declared_input = 5;  //true value is 4; 5 matches no padding
  const ShapeReport report = infer_shapes(spec);
  CHECK(!report.clean());
  REQUIRE(report.conflicts.size() == 1);
  CHECK(report.conflicts[0].find("row 2") != std::string::npos);
  CHECK_THROWS_AS(build_model(spec, 1), std::runtime_error);
  CHECK_NOTHROW(build_model(spec, 1, /*acknowledge_conflicts=*/true));
}

TEST_CASE("channel mismatches are also conflicts") {
  ModelSpec spec = tiny_spec();
  spec.layers[2].declared_channels = 7;
  const ShapeReport report = infer_shapes(spec);
  CHECK(!report.clean());
}

TEST_CASE("parameter enumeration covers trunk and heads in declared order") {
  const ModelSpec spec = tiny_spec();
  Model model = build_model(spec, 7);
  const std::vector<Model::ParamRef> params = model.parameters();
  // 3 trunk layers x (weights, gamma, beta) + 2 heads x (weights, bias).
  REQUIRE(params.size() == 3u * 3 + 2u * 2);
  CHECK(params[0].tensor == &model.layers[0].weights);
  CHECK(params[1].tensor == &model.layers[0].bn.gamma);
  CHECK(params[2].tensor == &model.layers[0].bn.beta);
  CHECK(params[9].tensor == &model.heads[0].weights);
  CHECK(params[10].tensor == &model.heads[0].bias);
  CHECK(params[12].tensor == &model.heads[1].bias);

  std::int64_t total = 0;
  for (const Model::ParamRef& p : params) total += p.tensor->size();
  CHECK(total == model.parameter_count());

  // Trunk conv weight elements match the analytic parameter counts.
  std::int64_t trunk = 0;
  for (const ConvLayer& layer : model.layers)
    trunk += layer_cost(layer.spec, 8).params;
  CHECK(trunk == model.trunk_weight_count());
}

TEST_CASE("head geometry: (classes+4) channels per anchor slot") {
  const ModelSpec spec = tiny_spec();
  const Model model = build_model(spec, 7);
  REQUIRE(model.heads.size() == 2);
  for (const HeadLayer& head : model.heads) {
    CHECK(head.spec.out_channels ==
          (spec.num_classes + 4) * model.anchors.anchors_per_cell);
    CHECK(head.spec.kernel_size == 3);
    CHECK(head.bias.c == head.spec.out_channels);
  }
  CHECK(model.heads[0].map_size == 4);
  CHECK(model.heads[1].map_size == 2);
  CHECK(model.anchors.size() == (4 * 4 + 2 * 2) * 6);
}

TEST_CASE("initialization is seed-deterministic and seed-sensitive") {
  const ModelSpec spec = tiny_spec();
  Model a = build_model(spec, 7);
  Model b = build_model(spec, 7);
  Model c = build_model(spec, 8);
  CHECK(a.layers[0].weights.data == b.layers[0].weights.data);
  CHECK(a.heads[0].weights.data == b.heads[0].weights.data);
  CHECK(a.layers[0].weights.data != c.layers[0].weights.data);
  for (double g : a.layers[0].bn.gamma.data) CHECK(g == 1.0);
  for (double v : a.layers[0].bn.running_var) CHECK(v == 1.0);
}

TEST_CASE("predict_raw flattens head outputs into anchor order") {
  const ModelSpec spec = tiny_spec();
  Model model = build_model(spec, 7);
  // Zero the head weights and write recognizable per-channel biases so each
  // output position carries its channel's bias.
  for (HeadLayer& head : model.heads) {
    head.weights.fill(0.0);
    for (int ch = 0; ch < head.bias.c; ++ch)
      head.bias.data[ch] = ch * 0.001;
  }
  Rng rng(3);
  Tensor4 image(1, 3, 8, 8);
  for (double& v : image.data) v = rng.uniform(0.0, 1.0);
  const PredictionSet pred = model.predict_raw(image);
  pred.validate();
  CHECK(pred.num_anchors == static_cast<int>(model.anchors.size()));
  CHECK(pred.num_classes == 3);
  const int block = spec.num_classes + 4;  // 7 channels per anchor slot
  for (int a = 0; a < pred.num_anchors; ++a) {
    const Anchor& anchor = model.anchors.anchors[a];
    const int base = anchor.slot * block;
    for (int j = 0; j < 3; ++j)
      CHECK(pred.logits[a * 3 + j] == doctest::Approx((base + j) * 0.001));
    for (int d = 0; d < 4; ++d)
      CHECK(pred.offsets[a * 4 + d] ==
            doctest::Approx((base + 3 + d) * 0.001));
  }
}

TEST_CASE("detect decodes crafted logits into the expected box") {
  const ModelSpec spec = tiny_spec();
  Model model = build_model(spec, 7);
  for (ConvLayer& layer : model.layers) layer.weights.fill(0.0);
  for (HeadLayer& head : model.heads) {
    head.weights.fill(0.0);
    head.bias.fill(0.0);
    const int block = spec.num_classes + 4;
    // Slot 0 of every cell: strong class-1 logit, zero offsets.
    head.bias.data[0] = -8.0;  // background
    head.bias.data[1] = 8.0;   // class 1
    head.bias.data[2] = -8.0;  // class 2
    // Remaining slots: strong background.
    for (int slot = 1; slot < model.anchors.anchors_per_cell; ++slot)
      head.bias.data[slot * block] = 8.0;
  }
  const Tensor4 image(1, 3, 8, 8, 0.5);
  const std::vector<Detection> dets = model.detect(image, 0.5, 0.45, 1000);
  REQUIRE(!dets.empty());
  for (const Detection& d : dets) {
    CHECK(d.class_id == 1);
    CHECK(d.score > 0.99);  // softmax(8 vs -8) twice
    // Offsets are zero, so each detection sits exactly on its anchor.
    bool found = false;
    for (int a = 0; a < model.anchors.size(); ++a) {
      const Box& ab = model.anchors.anchors[a].box;
      if (std::abs(ab.cx - d.box.cx) < 1e-12 &&
          std::abs(ab.cy - d.box.cy) < 1e-12 &&
          std::abs(ab.w - d.box.w) < 1e-12 && std::abs(ab.h - d.box.h) < 1e-12)
        found = true;
    }
    CHECK(found);
  }
  // A confidence threshold above the softmax ceiling removes everything.
  CHECK(model.detect(image, 0.99999999, 0.45, 1000).empty());
}

TEST_CASE("fp16 rounding fixed points and halving values") {
  CHECK(fp16_round(0.0) == 0.0);
  CHECK(fp16_round(1.0) == 1.0);
  CHECK(fp16_round(0.1) == 0.0999755859375);
  CHECK(fp16_round(-0.1) == -0.0999755859375);
  CHECK(fp16_round(65504.0) == 65504.0);
  CHECK(fp16_round(65505.0) == 65504.0);   // saturates
  CHECK(fp16_round(1e10) == 65504.0);
  CHECK(fp16_round(-1e10) == -65504.0);
  const double quantum = std::ldexp(1.0, -24);  // smallest subnormal
  CHECK(fp16_round(quantum) == quantum);
  CHECK(fp16_round(quantum / 2) == 0.0);       // tie rounds to even (zero)
  CHECK(fp16_round(quantum * 1.5) == quantum * 2);  // tie to even quantum
  CHECK(fp16_round(quantum * 0.6) == quantum);
  CHECK_THROWS(fp16_round(std::numeric_limits<double>::quiet_NaN()));
}

TEST_CASE("fp16 rounding is idempotent over a wide sweep") {
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.uniform(-1.0, 1.0) *
                     std::pow(10.0, rng.uniform(-8.0, 6.0));
    const double once = fp16_round(x);
    CHECK(fp16_round(once) == once);
  }
}

TEST_CASE("simulate_fp16 rounds parameters, leaves running stats alone") {
  const ModelSpec spec = tiny_spec();
  Model model = build_model(spec, 7);
  model.layers[0].bn.running_mean[0] = 0.1;  // not binary16-representable
  model.layers[0].weights.data[0] = 1e7;     // will saturate
  model.layers[0].weights.data[1] = -2e6;    // will saturate
  const Fp16Result result = simulate_fp16(model);
  CHECK(result.saturated == 2);
  CHECK(result.model.layers[0].weights.data[0] == 65504.0);
  CHECK(result.model.layers[0].weights.data[1] == -65504.0);
  CHECK(result.model.layers[0].bn.running_mean[0] == 0.1);  // untouched
  // Every learned parameter is now a binary16 fixed point.
  Model rounded = result.model;
  const Fp16Result again = simulate_fp16(rounded);
  CHECK(again.saturated == 0);
  Model a = result.model;
  Model b = again.model;
  for (size_t i = 0; i < a.layers.size(); ++i)
    CHECK(a.layers[i].weights.data == b.layers[i].weights.data);
  for (size_t i = 0; i < a.heads.size(); ++i) {
    CHECK(a.heads[i].weights.data == b.heads[i].weights.data);
    CHECK(a.heads[i].bias.data == b.heads[i].bias.data);
  }
}

TEST_CASE("checkpoints round-trip parameters and optimizer state bit-exactly") {
  const ModelSpec spec = tiny_spec();
  Model model = build_model(spec, 7);
  model.layers[0].bn.running_mean[1] = 0.25;
  model.layers[0].bn.running_var[1] = 0.75;

  AdamOptimizer opt;
  std::vector<Model::ParamRef> params = model.parameters();
  for (const Model::ParamRef& p : params)
    opt.add_slot(static_cast<std::size_t>(p.tensor->size()));
  // Take one optimization step so the moments are nonzero.
  opt.begin_step();
  for (size_t i = 0; i < params.size(); ++i) {
    std::vector<double> grad(params[i].tensor->data.size(), 0.125);
    opt.update(static_cast<int>(i), 1e-3, grad.data(),
               params[i].tensor->data.data(), grad.size());
  }

  const std::string path = "test_checkpoint.ckpt";
  save_checkpoint(model, &opt, path);
  AdamOptimizer opt2;
  Model back = load_checkpoint(path, &opt2);
  CHECK(spec_hash(back.spec) == spec_hash(spec));
  CHECK(opt2.step_count() == 1);

  std::vector<Model::ParamRef> back_params = back.parameters();
  REQUIRE(back_params.size() == params.size());
  for (size_t i = 0; i < params.size(); ++i)
    CHECK(params[i].tensor->data == back_params[i].tensor->data);
  CHECK(back.layers[0].bn.running_mean == model.layers[0].bn.running_mean);
  CHECK(back.layers[0].bn.running_var == model.layers[0].bn.running_var);

  // Continuing one more identical step from both must agree bitwise.
  opt.begin_step();
  opt2.begin_step();
  for (size_t i = 0; i < params.size(); ++i) {
    std::vector<double> grad(params[i].tensor->data.size(), -0.0625);
    opt.update(static_cast<int>(i), 1e-3, grad.data(),
               params[i].tensor->data.data(), grad.size());
    opt2.update(static_cast<int>(i), 1e-3, grad.data(),
                back_params[i].tensor->data.data(), grad.size());
  }
  for (size_t i = 0; i < params.size(); ++i)
    CHECK(params[i].tensor->data == back_params[i].tensor->data);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loads do not require an optimizer") {
  const ModelSpec spec = tiny_spec();
  const Model model = build_model(spec, 9);
  const std::string path = "test_checkpoint_noopt.ckpt";
  save_checkpoint(model, nullptr, path);
  const Model back = load_checkpoint(path);
  CHECK(spec_hash(back.spec) == spec_hash(spec));
  std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoints are rejected") {
  const ModelSpec spec = tiny_spec();
  const Model model = build_model(spec, 9);
  const std::string path = "test_checkpoint_corrupt.ckpt";
  save_checkpoint(model, nullptr, path);
  // Flip a byte in the middle of the file.
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(200);
  char byte = 0;
  f.read(&byte, 1);
  f.seekp(200);
  byte = static_cast<char>(byte ^ 0x5a);
  f.write(&byte, 1);
  f.close();
  CHECK_THROWS(load_checkpoint(path));
  std::remove(path.c_str());
  CHECK_THROWS(load_checkpoint("no_such_checkpoint.ckpt"));
}

TEST_CASE("model spec validation rejects incoherent chains") {
  ModelSpec spec = tiny_spec();
  spec.taps = {5};  // out of range
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.taps = {};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.num_classes = 1;  // background only
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.layers[1].in_channels = 99;  // breaks the channel chain
  CHECK_THROWS(build_model(spec, 1));
  spec = tiny_spec();
  spec.layers.clear();
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
