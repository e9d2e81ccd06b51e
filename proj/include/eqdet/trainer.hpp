// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqdet/dataset.hpp"
#include "eqdet/loss.hpp"
#include "eqdet/model.hpp"
#include "eqdet/optim.hpp"
#include "eqdet/voc_eval.hpp"

namespace eqdet {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::int64_t iterations = 0;
  int batch_size = 8;
  std::int64_t validation_interval = 0;  // 0 disables periodic validation

  ConfLossKind conf_loss = ConfLossKind::focal;
  FocalParams focal;
  double hnm_ratio = 3.0;
  double match_threshold = 0.5;

  AdamParams adam;
  LrSchedule lr;

  double eval_conf_threshold = 0.3;
  double eval_nms_iou = 0.45;
  int eval_top_k = 100;

  // Added to every head's background-logit bias after initialization, so an
  // untrained model starts out predicting mostly background.
  double head_background_bias = 0.0;

  ModelSpec model;
  SplitSpec split;

  // Data source: either a synthetic scene recipe...
  bool has_synthetic = false;
  SceneSpec scene;
  int synthetic_count = 0;
  // ...or three annotation files (rasters resolve relative to each file).
  std::string train_annotations;
  std::string val_annotations;
  std::string test_annotations;

  std::string out_dir;            // checkpoints/logs land here when non-empty
  std::string resume_checkpoint;  // continue from this checkpoint when set

  void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
TrainConfig train_config_from_json_file(const std::string& path);
// Fully resolved snapshot (model spec inlined) for reproducibility records.
std::string train_config_to_json(const TrainConfig& config);

struct DataItem {
  Image8 raster;
  LabeledImage label;
};

struct PreparedDataset {
  std::vector<DataItem> train;
  std::vector<DataItem> val;
  std::vector<DataItem> test;
};

// Synthetic mode: generate, stratify by each image's first-box class, split.
// Annotation mode: read the three files and their rasters.
PreparedDataset prepare_dataset(const TrainConfig& config);

struct TrainLog {
  struct IterRow {
    std::int64_t t = 0;
    double lr = 0.0;
    double loss = 0.0;
  };
  struct ValRow {
    std::int64_t t = 0;
    double val_loss = 0.0;
    double val_map = 0.0;
  };
  std::vector<IterRow> iterations;
  std::vector<ValRow> validations;
};

// CSV rows `t,lr,loss` / `t,val_loss,val_map`, full double precision.
void write_train_log_csv(const TrainLog& log, const std::string& iter_path,
                         const std::string& val_path);

// Deterministic without-replacement batch sampling: epoch e reshuffles the
// index deck with a seed derived from (seed, e); iteration t reads B indices
// starting at position t*B of the concatenated decks. A pure function of its
// arguments, so resumed runs reproduce the schedule exactly.
std::vector<int> batch_indices(std::uint64_t seed, std::int64_t iteration,
                               int batch_size, int dataset_size);

struct TrainResult {
  Model model;
  TrainLog log;
};

// Weight on the previous value when BN running statistics are updated from a
// batch: running = m*running + (1-m)*batch.
inline constexpr double kBnMomentum = 0.99;

// Full deterministic loop: match/encode targets once per image, batched
// forward on a gradient tape, analytic loss gradients seeded on the head
// outputs, Adam updates under the step-decay schedule, BN running statistics
// tracked by exponential moving average. Emits checkpoints at validation
// points and at the end when out_dir is set. A non-finite loss aborts with
// the offending iteration after dumping state.
TrainResult train(const TrainConfig& config, const PreparedDataset& data);

// Detection + evaluation over a split; image ids are split positions.
EvalReport evaluate(const Model& model, const std::vector<DataItem>& split,
                    double conf_threshold, double nms_iou, int top_k = 100);

// Detections for a split in file-record form (for the detect/eval commands).
std::vector<DetectionRecord> detect_split(const Model& model,
                                          const std::vector<DataItem>& split,
                                          double conf_threshold,
                                          double nms_iou, int top_k = 100);

// Mean per-image total loss of a split, inference-mode forward.
double split_loss(const Model& model, const std::vector<DataItem>& split,
                  double match_threshold, ConfLossKind kind,
                  const FocalParams& focal, double hnm_ratio);

}  // namespace eqdet
