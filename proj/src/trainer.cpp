// SPDX-License-Identifier: Apache-2.0
#include "eqdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "eqdet/rng.hpp"
#include "eqdet/tape.hpp"
#include "json.hpp"

namespace eqdet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config.

void TrainConfig::validate() const {
  if (iterations < 0)
    throw std::invalid_argument("TrainConfig: iterations must be >= 0");
  if (batch_size < 1)
    throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (validation_interval < 0)
    throw std::invalid_argument(
        "TrainConfig: validation_interval must be >= 0");
  if (!(match_threshold > 0.0 && match_threshold <= 1.0))
    throw std::invalid_argument(
        "TrainConfig: match_threshold must be in (0, 1]");
  if (hnm_ratio < 0.0)
    throw std::invalid_argument("TrainConfig: hnm_ratio must be >= 0");
  if (!(eval_conf_threshold > 0.0 && eval_conf_threshold <= 1.0))
    throw std::invalid_argument(
        "TrainConfig: eval_conf_threshold must be in (0, 1]");
  if (!(eval_nms_iou > 0.0 && eval_nms_iou < 1.0))
    throw std::invalid_argument("TrainConfig: eval_nms_iou must be in (0, 1)");
  if (eval_top_k < 1)
    throw std::invalid_argument("TrainConfig: eval_top_k must be >= 1");
  adam.validate();
  lr.validate();
  model.validate();
  split.validate();
  const bool has_files = !train_annotations.empty() ||
                         !val_annotations.empty() || !test_annotations.empty();
  if (has_synthetic == has_files)
    throw std::invalid_argument(
        "TrainConfig: provide either a synthetic recipe or annotation files");
  if (has_synthetic) {
    scene.validate();
    if (synthetic_count < 3)
      throw std::invalid_argument("TrainConfig: synthetic_count must be >= 3");
    if (scene.image_size != model.input_size)
      throw std::invalid_argument(
          "TrainConfig: scene image_size must match the model input size");
    if (scene.num_classes != model.num_classes - 1)
      throw std::invalid_argument(
          "TrainConfig: scene classes must be model classes minus background");
  } else if (train_annotations.empty() || val_annotations.empty() ||
             test_annotations.empty()) {
    throw std::invalid_argument(
        "TrainConfig: annotation mode needs train, val, and test files");
  }
}

namespace {

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.image_size = j.value("image_size", s.image_size);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.min_objects = j.value("min_objects", s.min_objects);
  s.max_objects = j.value("max_objects", s.max_objects);
  s.clutter_density = j.value("clutter_density", s.clutter_density);
  s.occlusion_probability =
      j.value("occlusion_probability", s.occlusion_probability);
  s.scale_min = j.value("scale_min", s.scale_min);
  s.scale_max = j.value("scale_max", s.scale_max);
  s.seed = j.value("seed", s.seed);
  return s;
}

json scene_to_json(const SceneSpec& s) {
  json j;
  j["image_size"] = s.image_size;
  j["num_classes"] = s.num_classes;
  j["min_objects"] = s.min_objects;
  j["max_objects"] = s.max_objects;
  j["clutter_density"] = s.clutter_density;
  j["occlusion_probability"] = s.occlusion_probability;
  j["scale_min"] = s.scale_min;
  j["scale_max"] = s.scale_max;
  j["seed"] = s.seed;
  return j;
}

SplitSpec split_from_json(const json& j) {
  SplitSpec s;
  s.test_fraction = j.value("test_fraction", s.test_fraction);
  s.val_fraction = j.value("val_fraction", s.val_fraction);
  s.seed = j.value("seed", s.seed);
  return s;
}

json split_to_json(const SplitSpec& s) {
  json j;
  j["test_fraction"] = s.test_fraction;
  j["val_fraction"] = s.val_fraction;
  j["seed"] = s.seed;
  return j;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }

  // Reject unrecognized top-level keys so a typo cannot silently fall back
  // to a default.
  static const std::set<std::string> known_keys = {
      "seed",           "iterations",      "batch_size",
      "validation_interval", "conf_loss",  "focal",
      "hnm_ratio",      "match_threshold", "adam",
      "lr",             "eval",            "head_background_bias",
      "model_spec",     "split",           "data",
      "out_dir",        "resume_checkpoint"};
  for (const auto& item : j.items())
    if (known_keys.find(item.key()) == known_keys.end())
      throw std::invalid_argument("train config: unknown key '" + item.key() +
                                  "'");

  TrainConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.iterations = j.at("iterations").get<std::int64_t>();
    c.batch_size = j.value("batch_size", c.batch_size);
    c.validation_interval =
        j.value("validation_interval", c.validation_interval);

    const std::string kind = j.value("conf_loss", std::string("focal"));
    if (kind == "focal")
      c.conf_loss = ConfLossKind::focal;
    else if (kind == "hnm")
      c.conf_loss = ConfLossKind::hard_negative_mining;
    else
      throw std::invalid_argument(
          "train config: conf_loss must be 'focal' or 'hnm'");
    if (j.contains("focal")) {
      c.focal.alpha = j["focal"].value("alpha", c.focal.alpha);
      c.focal.gamma = j["focal"].value("gamma", c.focal.gamma);
    }
    c.hnm_ratio = j.value("hnm_ratio", c.hnm_ratio);
    c.match_threshold = j.value("match_threshold", c.match_threshold);

    if (j.contains("adam")) {
      c.adam.beta1 = j["adam"].value("beta1", c.adam.beta1);
      c.adam.beta2 = j["adam"].value("beta2", c.adam.beta2);
      c.adam.epsilon = j["adam"].value("epsilon", c.adam.epsilon);
    }
    if (j.contains("lr")) {
      c.lr.base_lr = j["lr"].value("base_lr", c.lr.base_lr);
      c.lr.decay_rate = j["lr"].value("decay_rate", c.lr.decay_rate);
      c.lr.decay_steps = j["lr"].value("decay_steps", c.lr.decay_steps);
    }
    if (j.contains("eval")) {
      c.eval_conf_threshold =
          j["eval"].value("conf_threshold", c.eval_conf_threshold);
      c.eval_nms_iou = j["eval"].value("nms_iou", c.eval_nms_iou);
      c.eval_top_k = j["eval"].value("top_k", c.eval_top_k);
    }
    c.head_background_bias =
        j.value("head_background_bias", c.head_background_bias);

    const json& spec = j.at("model_spec");
    if (spec.is_string())
      c.model = load_model_spec(spec.get<std::string>());
    else
      c.model = model_spec_from_json(spec.dump());

    if (j.contains("split")) c.split = split_from_json(j["split"]);

    if (j.contains("data")) {
      const json& data = j["data"];
      if (data.contains("synthetic")) {
        c.has_synthetic = true;
        c.scene = scene_from_json(data["synthetic"]);
        c.synthetic_count = data["synthetic"].value("count", 0);
      }
      if (data.contains("annotations")) {
        const json& ann = data["annotations"];
        c.train_annotations = ann.value("train", std::string());
        c.val_annotations = ann.value("val", std::string());
        c.test_annotations = ann.value("test", std::string());
      }
    }
    c.out_dir = j.value("out_dir", c.out_dir);
    c.resume_checkpoint = j.value("resume_checkpoint", c.resume_checkpoint);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig train_config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read train config: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::exception& e) {
    throw std::invalid_argument("train config " + path + ": " + e.what());
  }
  // A model spec referenced by relative path resolves against the config
  // file's own directory, so the config works from any working directory.
  if (j.contains("model_spec") && j["model_spec"].is_string()) {
    const std::filesystem::path spec_path =
        j["model_spec"].get<std::string>();
    if (spec_path.is_relative())
      j["model_spec"] =
          (std::filesystem::path(path).parent_path() / spec_path).string();
  }
  return train_config_from_json(j.dump());
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["validation_interval"] = c.validation_interval;
  j["conf_loss"] =
      c.conf_loss == ConfLossKind::focal ? "focal" : "hnm";
  j["focal"] = {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}};
  j["hnm_ratio"] = c.hnm_ratio;
  j["match_threshold"] = c.match_threshold;
  j["adam"] = {{"beta1", c.adam.beta1},
               {"beta2", c.adam.beta2},
               {"epsilon", c.adam.epsilon}};
  j["lr"] = {{"base_lr", c.lr.base_lr},
             {"decay_rate", c.lr.decay_rate},
             {"decay_steps", c.lr.decay_steps}};
  j["eval"] = {{"conf_threshold", c.eval_conf_threshold},
               {"nms_iou", c.eval_nms_iou},
               {"top_k", c.eval_top_k}};
  j["head_background_bias"] = c.head_background_bias;
  j["model_spec"] = json::parse(model_spec_to_json(c.model));
  j["split"] = split_to_json(c.split);
  json data;
  if (c.has_synthetic) {
    data["synthetic"] = scene_to_json(c.scene);
    data["synthetic"]["count"] = c.synthetic_count;
  } else {
    data["annotations"] = {{"train", c.train_annotations},
                           {"val", c.val_annotations},
                           {"test", c.test_annotations}};
  }
  j["data"] = data;
  j["out_dir"] = c.out_dir;
  j["resume_checkpoint"] = c.resume_checkpoint;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Data preparation.

namespace {

std::vector<DataItem> load_annotation_split(const std::string& path) {
  const std::filesystem::path dir =
      std::filesystem::path(path).parent_path();
  std::vector<DataItem> items;
  for (LabeledImage& label : read_annotations(path)) {
    DataItem item;
    item.raster = read_ppm((dir / label.image_path).string());
    item.label = std::move(label);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

PreparedDataset prepare_dataset(const TrainConfig& config) {
  config.validate();
  PreparedDataset out;
  if (!config.has_synthetic) {
    out.train = load_annotation_split(config.train_annotations);
    out.val = load_annotation_split(config.val_annotations);
    out.test = load_annotation_split(config.test_annotations);
    return out;
  }

  std::vector<SyntheticImage> images =
      generate_synthetic(config.scene, config.synthetic_count);

  // Stratify by each image's first (round-robin) box class.
  std::vector<std::vector<LabeledImage>> per_class(config.scene.num_classes);
  for (const SyntheticImage& img : images) {
    if (img.label.boxes.empty())
      throw std::logic_error("prepare_dataset: generated image has no boxes");
    per_class[img.label.boxes.front().class_id - 1].push_back(img.label);
  }
  SplitResult split = split_dataset(per_class, config.split);

  const auto collect = [&](const std::vector<LabeledImage>& labels) {
    std::vector<DataItem> items;
    items.reserve(labels.size());
    for (const LabeledImage& label : labels) {
      DataItem item;
      item.raster = images[label.id].raster;  // id is the generation index
      item.label = label;
      items.push_back(std::move(item));
    }
    return items;
  };
  out.train = collect(split.train);
  out.val = collect(split.val);
  out.test = collect(split.test);
  return out;
}

// ---------------------------------------------------------------------------
// Logging.

void write_train_log_csv(const TrainLog& log, const std::string& iter_path,
                         const std::string& val_path) {
  std::ofstream iter_out(iter_path);
  if (!iter_out)
    throw std::runtime_error("cannot write training log: " + iter_path);
  iter_out << std::setprecision(std::numeric_limits<double>::max_digits10);
  iter_out << "t,lr,loss\n";
  for (const TrainLog::IterRow& row : log.iterations)
    iter_out << row.t << "," << row.lr << "," << row.loss << "\n";

  std::ofstream val_out(val_path);
  if (!val_out)
    throw std::runtime_error("cannot write validation log: " + val_path);
  val_out << std::setprecision(std::numeric_limits<double>::max_digits10);
  val_out << "t,val_loss,val_map\n";
  for (const TrainLog::ValRow& row : log.validations)
    val_out << row.t << "," << row.val_loss << "," << row.val_map << "\n";
}

// ---------------------------------------------------------------------------
// Batch schedule.

std::vector<int> batch_indices(std::uint64_t seed, std::int64_t iteration,
                               int batch_size, int dataset_size) {
  if (iteration < 0)
    throw std::invalid_argument("batch_indices: iteration must be >= 0");
  if (batch_size < 1 || dataset_size < 1)
    throw std::invalid_argument("batch_indices: sizes must be positive");

  const std::uint64_t deck_seed = derive_seed(seed, 0x6261746368ULL);
  std::vector<int> deck;
  std::int64_t cached_epoch = -1;
  const auto deck_for = [&](std::int64_t epoch) -> const std::vector<int>& {
    if (epoch != cached_epoch) {
      deck.resize(dataset_size);
      std::iota(deck.begin(), deck.end(), 0);
      Rng rng(derive_seed(deck_seed, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(deck);
      cached_epoch = epoch;
    }
    return deck;
  };

  std::vector<int> out(batch_size);
  std::int64_t pos = iteration * static_cast<std::int64_t>(batch_size);
  for (int i = 0; i < batch_size; ++i, ++pos)
    out[i] = deck_for(pos / dataset_size)[pos % dataset_size];
  return out;
}

// ---------------------------------------------------------------------------
// Loss plumbing shared by training and evaluation.

namespace {

std::vector<GtBox> gt_boxes_of(const LabeledImage& label) {
  std::vector<GtBox> gt;
  gt.reserve(label.boxes.size());
  for (const LabeledBox& lb : label.boxes)
    gt.push_back(GtBox{lb.box, lb.class_id});
  return gt;
}

LossTargets targets_for(const Model& model, const LabeledImage& label,
                        double match_threshold) {
  const std::vector<GtBox> gt = gt_boxes_of(label);
  const MatchResult match =
      match_anchors(model.anchors, gt, match_threshold);
  return encode_matches(model.anchors, gt, match);
}

// Adds image `i`'s loss gradients into the batched head gradient tensors.
void scatter_gradients(const Model& model, const LossReport& report, int image,
                       double scale, std::vector<Tensor4>& head_grads) {
  const int nc = model.spec.num_classes;
  const int per_anchor = nc + 4;
  const int k = model.anchors.anchors_per_cell;
  for (size_t t = 0; t < model.heads.size(); ++t) {
    Tensor4& g = head_grads[t];
    const int n = model.heads[t].map_size;
    const int base = model.anchors.map_offsets[t];
    for (int yy = 0; yy < n; ++yy) {
      for (int xx = 0; xx < n; ++xx) {
        for (int a = 0; a < k; ++a) {
          const int anchor = base + (yy * n + xx) * k + a;
          for (int j = 0; j < nc; ++j)
            g.at(image, a * per_anchor + j, yy, xx) +=
                scale * report.grad_logits[static_cast<size_t>(anchor) * nc + j];
          for (int d = 0; d < 4; ++d)
            g.at(image, a * per_anchor + nc + d, yy, xx) +=
                scale * report.grad_offsets[static_cast<size_t>(anchor) * 4 + d];
        }
      }
    }
  }
}

std::string checkpoint_name(const std::string& dir, std::int64_t t) {
  char name[48];
  std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt",
                static_cast<long long>(t));
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Evaluation.

EvalReport evaluate(const Model& model, const std::vector<DataItem>& split,
                    double conf_threshold, double nms_iou, int top_k) {
  if (split.empty())
    throw std::invalid_argument("evaluate: split holds no images");
  std::vector<Detection> detections;
  std::vector<GroundTruth> gts;
  for (size_t i = 0; i < split.size(); ++i) {
    const Tensor4 image = image_to_tensor(split[i].raster);
    for (Detection det : model.detect(image, conf_threshold, nms_iou, top_k)) {
      det.image_id = static_cast<int>(i);
      detections.push_back(det);
    }
    for (const LabeledBox& lb : split[i].label.boxes)
      gts.push_back(GroundTruth{static_cast<int>(i), lb.class_id, lb.box});
  }
  return evaluate_detections(detections, gts, 0.5);
}

std::vector<DetectionRecord> detect_split(const Model& model,
                                          const std::vector<DataItem>& split,
                                          double conf_threshold,
                                          double nms_iou, int top_k) {
  std::vector<DetectionRecord> records;
  for (const DataItem& item : split) {
    const Tensor4 image = image_to_tensor(item.raster);
    for (const Detection& det :
         model.detect(image, conf_threshold, nms_iou, top_k)) {
      DetectionRecord rec;
      rec.image_path = item.label.image_path;
      rec.class_id = det.class_id;
      rec.box = det.box;
      rec.score = det.score;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

double split_loss(const Model& model, const std::vector<DataItem>& split,
                  double match_threshold, ConfLossKind kind,
                  const FocalParams& focal, double hnm_ratio) {
  if (split.empty())
    throw std::invalid_argument("split_loss: split holds no images");
  double total = 0.0;
  for (const DataItem& item : split) {
    const Tensor4 image = image_to_tensor(item.raster);
    const PredictionSet pred = model.predict_raw(image);
    const LossTargets targets = targets_for(model, item.label, match_threshold);
    total += total_loss(pred, targets, kind, focal, hnm_ratio).total;
  }
  return total / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// Training loop.

TrainResult train(const TrainConfig& config, const PreparedDataset& data) {
  config.validate();
  if (data.train.empty())
    throw std::invalid_argument("train: training split holds no images");

  TrainResult result;
  AdamOptimizer optimizer(config.adam);
  std::int64_t start_t = 0;
  if (!config.resume_checkpoint.empty()) {
    result.model = load_checkpoint(config.resume_checkpoint, &optimizer);
    if (spec_hash(result.model.spec) != spec_hash(config.model))
      throw std::runtime_error(
          "train: checkpoint model spec differs from the config");
    start_t = optimizer.step_count();
  } else {
    result.model = build_model(config.model, config.seed);
    if (config.head_background_bias != 0.0) {
      const int per_anchor = config.model.num_classes + 4;
      for (HeadLayer& head : result.model.heads)
        for (int a = 0; a < result.model.anchors.anchors_per_cell; ++a)
          head.bias.data[a * per_anchor] += config.head_background_bias;
    }
  }
  Model& model = result.model;

  std::vector<Model::ParamRef> params = model.parameters();
  if (optimizer.num_slots() == 0) {
    for (const Model::ParamRef& ref : params)
      optimizer.add_slot(static_cast<std::size_t>(ref.tensor->size()));
  } else {
    if (optimizer.num_slots() != static_cast<int>(params.size()))
      throw std::runtime_error("train: optimizer state does not fit the model");
    for (size_t p = 0; p < params.size(); ++p)
      if (optimizer.slot_size(static_cast<int>(p)) !=
          static_cast<std::size_t>(params[p].tensor->size()))
        throw std::runtime_error(
            "train: optimizer state does not fit the model");
  }

  // Matching and target encoding are pure per image; do them once.
  std::vector<LossTargets> targets;
  targets.reserve(data.train.size());
  for (const DataItem& item : data.train)
    targets.push_back(targets_for(model, item.label, config.match_threshold));

  const int batch = config.batch_size;
  const int side = config.model.input_size;
  const size_t num_layers = model.layers.size();

  for (std::int64_t t = start_t; t < config.iterations; ++t) {
    const double lr = config.lr.learning_rate(t);
    const std::vector<int> indices = batch_indices(
        config.seed, t, batch, static_cast<int>(data.train.size()));

    Tensor4 input(batch, model.spec.input_channels, side, side);
    for (int i = 0; i < batch; ++i) {
      const Tensor4 one = image_to_tensor(data.train[indices[i]].raster);
      std::copy(one.data.begin(), one.data.end(),
                input.data.begin() + static_cast<std::ptrdiff_t>(i) *
                                         one.size());
    }

    GradientTape tape;
    std::vector<Value> param_vals;
    param_vals.reserve(params.size());
    for (const Model::ParamRef& ref : params)
      param_vals.push_back(tape.watch(*ref.tensor));

    std::vector<std::vector<double>> batch_means(num_layers);
    std::vector<std::vector<double>> batch_vars(num_layers);
    std::vector<Value> head_vals;
    Value x = tape.watch(input);
    size_t next_tap = 0;
    for (size_t i = 0; i < num_layers; ++i) {
      x = tape.conv2d(x, param_vals[3 * i], model.layers[i].spec);
      x = tape.batchnorm_train(x, param_vals[3 * i + 1], param_vals[3 * i + 2],
                               model.layers[i].bn.eps, &batch_means[i],
                               &batch_vars[i]);
      x = tape.relu6(x);
      if (next_tap < model.spec.taps.size() &&
          model.spec.taps[next_tap] == static_cast<int>(i)) {
        const size_t head_w = 3 * num_layers + 2 * next_tap;
        Value h = tape.conv2d(x, param_vals[head_w],
                              model.heads[next_tap].spec);
        h = tape.bias_add(h, param_vals[head_w + 1]);
        head_vals.push_back(h);
        ++next_tap;
      }
    }

    std::vector<const Tensor4*> head_ptrs;
    std::vector<Tensor4> head_grads;
    for (Value h : head_vals) {
      const Tensor4& y = tape.tensor(h);
      head_ptrs.push_back(&y);
      head_grads.emplace_back(y.b, y.c, y.h, y.w);
    }

    double batch_loss = 0.0;
    for (int i = 0; i < batch; ++i) {
      const PredictionSet pred = model.pack_predictions(head_ptrs, i);
      const LossReport report =
          total_loss(pred, targets[indices[i]], config.conf_loss, config.focal,
                     config.hnm_ratio);
      batch_loss += report.total / batch;
      scatter_gradients(model, report, i, 1.0 / batch, head_grads);
    }

    if (!std::isfinite(batch_loss)) {
      std::string dump;
      if (!config.out_dir.empty()) {
        dump = (std::filesystem::path(config.out_dir) / "abort_dump.ckpt")
                   .string();
        save_checkpoint(model, &optimizer, dump);
      }
      throw std::runtime_error(
          "train: non-finite loss at iteration " + std::to_string(t) +
          (dump.empty() ? "" : "; state dumped to " + dump));
    }

    for (size_t h = 0; h < head_vals.size(); ++h)
      tape.seed_gradient(head_vals[h], head_grads[h]);
    tape.run_backward();

    optimizer.begin_step();
    for (size_t p = 0; p < params.size(); ++p) {
      if (!tape.has_gradient(param_vals[p]))
        throw std::logic_error("train: parameter " + params[p].name +
                               " received no gradient");
      const Tensor4& grad = tape.gradient(param_vals[p]);
      optimizer.update(static_cast<int>(p), lr, grad.data.data(),
                       params[p].tensor->data.data(), grad.data.size());
    }

    for (size_t i = 0; i < num_layers; ++i) {
      BnParams& bn = model.layers[i].bn;
      for (size_t c = 0; c < bn.running_mean.size(); ++c) {
        bn.running_mean[c] = kBnMomentum * bn.running_mean[c] +
                             (1.0 - kBnMomentum) * batch_means[i][c];
        bn.running_var[c] = kBnMomentum * bn.running_var[c] +
                            (1.0 - kBnMomentum) * batch_vars[i][c];
      }
    }

    result.log.iterations.push_back({t, lr, batch_loss});

    if (config.validation_interval > 0 &&
        (t + 1) % config.validation_interval == 0 && !data.val.empty()) {
      const double val_loss =
          split_loss(model, data.val, config.match_threshold, config.conf_loss,
                     config.focal, config.hnm_ratio);
      const double val_map =
          evaluate(model, data.val, config.eval_conf_threshold,
                   config.eval_nms_iou, config.eval_top_k)
              .map;
      result.log.validations.push_back({t + 1, val_loss, val_map});
      if (!config.out_dir.empty())
        save_checkpoint(model, &optimizer,
                        checkpoint_name(config.out_dir, t + 1));
    }
  }

  if (!config.out_dir.empty() && config.iterations > start_t)
    save_checkpoint(
        model, &optimizer,
        (std::filesystem::path(config.out_dir) / "checkpoint_final.ckpt")
            .string());
  return result;
}

}  // namespace eqdet
