// SPDX-License-Identifier: Apache-2.0
//
// eqdet command-line interface. Every subcommand resolves its parameters
// with precedence CLI flag > config file > built-in default, writes a
// resolved-config snapshot next to its outputs, and reports failures as a
// single `error: ...` line on stderr with a nonzero exit status.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eqdet/anchors.hpp"
#include "eqdet/dataset.hpp"
#include "eqdet/econ.hpp"
#include "eqdet/model.hpp"
#include "eqdet/nn.hpp"
#include "eqdet/trainer.hpp"
#include "eqdet/voc_eval.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eqdet;

namespace {

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw std::runtime_error("an output directory is required");
  fs::create_directories(dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

void write_snapshot(const std::string& dir, const std::string& name,
                    const json& resolved) {
  write_text((fs::path(dir) / name).string(), resolved.dump(2));
}

std::string rel_to(const fs::path& target, const fs::path& base) {
  std::error_code ec;
  const fs::path rel = fs::relative(target, base, ec);
  return (ec || rel.empty()) ? target.string() : rel.string();
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string out;
  int count = 200;
  SceneSpec scene;
};

void run_gen_data(const GenDataArgs& args) {
  ensure_dir(args.out);
  const std::vector<SyntheticImage> images =
      generate_synthetic(args.scene, args.count);
  std::vector<LabeledImage> labels;
  labels.reserve(images.size());
  for (const SyntheticImage& img : images) {
    write_ppm(img.raster, (fs::path(args.out) / img.label.image_path).string());
    labels.push_back(img.label);
  }
  const std::string ann = (fs::path(args.out) / "annotations.txt").string();
  write_annotations(labels, ann);

  json resolved;
  resolved["command"] = "gen-data";
  resolved["out"] = args.out;
  resolved["count"] = args.count;
  resolved["scene"] = {{"image_size", args.scene.image_size},
                       {"num_classes", args.scene.num_classes},
                       {"min_objects", args.scene.min_objects},
                       {"max_objects", args.scene.max_objects},
                       {"clutter_density", args.scene.clutter_density},
                       {"occlusion_probability", args.scene.occlusion_probability},
                       {"scale_min", args.scene.scale_min},
                       {"scale_max", args.scene.scale_max},
                       {"seed", args.scene.seed}};
  write_snapshot(args.out, "gen_data_config.json", resolved);
  std::cout << "wrote " << images.size() << " images and " << ann << "\n";
}

// ---------------------------------------------------------------------------
// split

struct SplitArgs {
  std::string out;
  std::string annotations;
  std::string counts;  // comma-separated per-class totals (dry run)
  SplitSpec spec;
};

json manifest_row(int class_id, int total, const SplitCounts& c) {
  return json{{"class_id", class_id},
              {"total", total},
              {"train", c.train},
              {"val", c.val},
              {"test", c.test}};
}

void run_split(const SplitArgs& args) {
  if (args.annotations.empty() == args.counts.empty())
    throw std::runtime_error(
        "split needs exactly one of --annotations or --counts");

  json manifest;
  manifest["command"] = "split";
  manifest["test_fraction"] = args.spec.test_fraction;
  manifest["val_fraction"] = args.spec.val_fraction;
  manifest["seed"] = args.spec.seed;
  manifest["classes"] = json::array();

  if (!args.counts.empty()) {
    // Dry run over bare class totals: apply the per-class rule, no files.
    std::vector<int> totals;
    std::stringstream ss(args.counts);
    std::string tok;
    while (std::getline(ss, tok, ','))
      totals.push_back(std::stoi(tok));
    if (totals.empty()) throw std::runtime_error("split: --counts is empty");
    SplitCounts sum;
    for (size_t k = 0; k < totals.size(); ++k) {
      const SplitCounts c = split_counts(totals[k], args.spec);
      manifest["classes"].push_back(
          manifest_row(static_cast<int>(k + 1), totals[k], c));
      sum.train += c.train;
      sum.val += c.val;
      sum.test += c.test;
    }
    manifest["splits"] = {{"train", sum.train}, {"val", sum.val},
                          {"test", sum.test}};
    const std::string text = manifest.dump(2);
    std::cout << text << "\n";
    if (!args.out.empty()) {
      ensure_dir(args.out);
      write_text((fs::path(args.out) / "split_manifest.json").string(), text);
    }
    return;
  }

  ensure_dir(args.out);
  const std::vector<LabeledImage> items = read_annotations(args.annotations);

  // Stratify by each image's first-box class.
  int max_class = 0;
  for (const LabeledImage& item : items)
    max_class = std::max(max_class, item.boxes.front().class_id);
  std::vector<std::vector<LabeledImage>> per_class(max_class);
  const fs::path in_dir = fs::path(args.annotations).parent_path();
  for (LabeledImage item : items) {
    // Re-anchor raster paths so the split files resolve from the out dir.
    item.image_path = rel_to(in_dir / item.image_path, args.out);
    per_class[item.boxes.front().class_id - 1].push_back(std::move(item));
  }
  SplitResult split = split_dataset(per_class, args.spec);

  write_annotations(split.train, (fs::path(args.out) / "train.txt").string());
  write_annotations(split.val, (fs::path(args.out) / "val.txt").string());
  write_annotations(split.test, (fs::path(args.out) / "test.txt").string());

  for (int k = 0; k < max_class; ++k) {
    SplitCounts c;
    const auto count_in = [&](const std::vector<LabeledImage>& part) {
      int n = 0;
      for (const LabeledImage& item : part)
        if (item.boxes.front().class_id == k + 1) ++n;
      return n;
    };
    c.train = count_in(split.train);
    c.val = count_in(split.val);
    c.test = count_in(split.test);
    manifest["classes"].push_back(manifest_row(
        k + 1, static_cast<int>(per_class[k].size()), c));
  }
  manifest["splits"] = {{"train", split.train.size()},
                        {"val", split.val.size()},
                        {"test", split.test.size()}};
  manifest["annotations"] = args.annotations;
  const std::string text = manifest.dump(2);
  write_text((fs::path(args.out) / "split_manifest.json").string(), text);
  std::cout << text << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void run_train(const TrainArgs& args) {
  TrainConfig config = train_config_from_json_file(args.config);
  if (args.seed_set) config.seed = args.seed;
  if (!args.out.empty()) config.out_dir = args.out;
  if (config.out_dir.empty())
    throw std::runtime_error("train needs an output directory (--out)");
  ensure_dir(config.out_dir);
  write_snapshot(config.out_dir, "resolved_train_config.json",
                 json::parse(train_config_to_json(config)));

  const PreparedDataset data = prepare_dataset(config);
  std::cout << "dataset: " << data.train.size() << " train / "
            << data.val.size() << " val / " << data.test.size() << " test\n";
  const TrainResult result = train(config, data);
  write_train_log_csv(result.log,
                      (fs::path(config.out_dir) / "train_log.csv").string(),
                      (fs::path(config.out_dir) / "val_log.csv").string());
  if (!result.log.iterations.empty())
    std::cout << "final training loss "
              << result.log.iterations.back().loss << " after "
              << result.log.iterations.size() << " iterations\n";
  std::cout << "checkpoint: "
            << (fs::path(config.out_dir) / "checkpoint_final.ckpt").string()
            << "\n";
}

// ---------------------------------------------------------------------------
// Shared model/data loading for eval, detect, bench.

std::vector<DataItem> load_items(const std::string& annotations) {
  const fs::path dir = fs::path(annotations).parent_path();
  std::vector<DataItem> items;
  for (LabeledImage& label : read_annotations(annotations)) {
    DataItem item;
    item.raster = read_ppm((dir / label.image_path).string());
    item.label = std::move(label);
    items.push_back(std::move(item));
  }
  return items;
}

struct EvalArgs {
  std::string out;
  std::string checkpoint;
  std::string detections;
  std::string annotations;
  double conf = 0.3;
  double nms_iou = 0.45;
  int top_k = 100;
};

void run_eval(const EvalArgs& args) {
  if (args.annotations.empty())
    throw std::runtime_error("eval needs --annotations");
  if (args.checkpoint.empty() == args.detections.empty())
    throw std::runtime_error(
        "eval needs exactly one of --checkpoint or --detections");
  ensure_dir(args.out);

  EvalReport report;
  if (!args.checkpoint.empty()) {
    const Model model = load_checkpoint(args.checkpoint, nullptr);
    const std::vector<DataItem> items = load_items(args.annotations);
    report = evaluate(model, items, args.conf, args.nms_iou, args.top_k);
  } else {
    // Precomputed detections: image ids come from path order in the
    // annotation file.
    const std::vector<LabeledImage> labels = read_annotations(args.annotations);
    std::map<std::string, int> id_of;
    std::vector<GroundTruth> gts;
    for (size_t i = 0; i < labels.size(); ++i) {
      id_of[labels[i].image_path] = static_cast<int>(i);
      for (const LabeledBox& lb : labels[i].boxes)
        gts.push_back(GroundTruth{static_cast<int>(i), lb.class_id, lb.box});
    }
    std::vector<Detection> detections;
    for (const DetectionRecord& rec : read_detections(args.detections)) {
      const auto it = id_of.find(rec.image_path);
      if (it == id_of.end())
        throw std::runtime_error("eval: detection for unknown image " +
                                 rec.image_path);
      detections.push_back(
          Detection{it->second, rec.class_id, rec.box, rec.score});
    }
    report = evaluate_detections(detections, gts, 0.5);
  }

  write_eval_report_json(report,
                         (fs::path(args.out) / "eval_report.json").string());
  write_pr_curves_csv(report,
                      (fs::path(args.out) / "pr_curves.csv").string());
  json resolved;
  resolved["command"] = "eval";
  resolved["checkpoint"] = args.checkpoint;
  resolved["detections"] = args.detections;
  resolved["annotations"] = args.annotations;
  resolved["conf_threshold"] = args.conf;
  resolved["nms_iou"] = args.nms_iou;
  resolved["top_k"] = args.top_k;
  write_snapshot(args.out, "resolved_eval_config.json", resolved);
  std::cout << std::setprecision(6) << "mAP " << report.map << " over "
            << report.class_ids.size() << " classes\n";
}

struct DetectArgs {
  std::string out;
  std::string checkpoint;
  std::string annotations;
  std::vector<std::string> images;
  double conf = 0.3;
  double nms_iou = 0.45;
  int top_k = 100;
};

void run_detect(const DetectArgs& args) {
  if (args.checkpoint.empty()) throw std::runtime_error("detect needs --checkpoint");
  if (args.annotations.empty() == args.images.empty())
    throw std::runtime_error(
        "detect needs exactly one of --annotations or --images");
  ensure_dir(args.out);
  const Model model = load_checkpoint(args.checkpoint, nullptr);

  std::vector<DetectionRecord> records;
  const auto detect_one = [&](const std::string& name, const Image8& raster) {
    for (const Detection& det :
         model.detect(image_to_tensor(raster), args.conf, args.nms_iou,
                      args.top_k)) {
      DetectionRecord rec;
      rec.image_path = name;
      rec.class_id = det.class_id;
      rec.box = det.box;
      rec.score = det.score;
      records.push_back(std::move(rec));
    }
  };
  if (!args.annotations.empty()) {
    for (const DataItem& item : load_items(args.annotations))
      detect_one(item.label.image_path, item.raster);
  } else {
    for (const std::string& path : args.images)
      detect_one(path, read_ppm(path));
  }
  const std::string out_file = (fs::path(args.out) / "detections.txt").string();
  write_detections(records, out_file);

  json resolved;
  resolved["command"] = "detect";
  resolved["checkpoint"] = args.checkpoint;
  resolved["annotations"] = args.annotations;
  resolved["images"] = args.images;
  resolved["conf_threshold"] = args.conf;
  resolved["nms_iou"] = args.nms_iou;
  resolved["top_k"] = args.top_k;
  write_snapshot(args.out, "resolved_detect_config.json", resolved);
  std::cout << "wrote " << records.size() << " detections to " << out_file
            << "\n";
}

struct BenchArgs {
  std::string out;
  std::string checkpoint;
  std::string annotations;
  int images = 8;
  int warmup = 1;
  int reps = 3;
  std::uint64_t seed = 0;
  double conf = 0.3;
  double nms_iou = 0.45;
  int top_k = 100;
};

void run_bench(const BenchArgs& args) {
  if (args.checkpoint.empty()) throw std::runtime_error("bench needs --checkpoint");
  ensure_dir(args.out);
  const Model model = load_checkpoint(args.checkpoint, nullptr);

  std::vector<Tensor4> frames;
  if (!args.annotations.empty()) {
    for (const DataItem& item : load_items(args.annotations))
      frames.push_back(image_to_tensor(item.raster));
  } else {
    SceneSpec scene;
    scene.image_size = model.spec.input_size;
    scene.num_classes = std::clamp(model.spec.num_classes - 1, 1, 6);
    scene.seed = args.seed;
    for (const SyntheticImage& img : generate_synthetic(scene, args.images))
      frames.push_back(image_to_tensor(img.raster));
  }

  const BenchmarkResult result =
      benchmark_fps(model, frames, args.conf, args.nms_iou, args.top_k,
                    args.warmup, args.reps);
  json report;
  report["images"] = result.images;
  report["repetitions"] = result.repetitions;
  report["warmup"] = args.warmup;
  report["seconds"] = result.seconds;
  report["fps"] = result.fps;
  report["min_fps"] = result.min_fps;
  report["max_fps"] = result.max_fps;
  report["checkpoint"] = args.checkpoint;
  write_snapshot(args.out, "bench_report.json", report);
  std::cout << std::setprecision(4) << result.fps << " fps over "
            << result.repetitions << " x " << result.images << " frames ("
            << "min " << result.min_fps << ", max " << result.max_fps << ")\n";
}

// ---------------------------------------------------------------------------
// econ

struct EconArgs {
  std::string out;
  std::string profiles;
};

void run_econ(const EconArgs& args) {
  if (args.profiles.empty()) throw std::runtime_error("econ needs --profiles");
  ensure_dir(args.out);
  const std::vector<DeviceProfile> profiles =
      read_device_profiles(args.profiles);
  const EconReport report = normalized_benefit(profiles);
  write_text((fs::path(args.out) / "econ_report.csv").string(),
             econ_report_csv(report));
  write_text((fs::path(args.out) / "econ_report.json").string(),
             econ_report_json(report));
  json resolved;
  resolved["command"] = "econ";
  resolved["profiles"] = args.profiles;
  write_snapshot(args.out, "resolved_econ_config.json", resolved);
  std::cout << econ_report_csv(report);
}

// ---------------------------------------------------------------------------
// cost-model

struct CostModelArgs {
  std::string out;
  std::string model_spec;
};

void run_cost_model(const CostModelArgs& args) {
  if (args.model_spec.empty())
    throw std::runtime_error("cost-model needs --model-spec");
  ensure_dir(args.out);
  const ModelSpec spec = load_model_spec(args.model_spec);
  const ShapeReport shapes = infer_shapes(spec);

  std::ostringstream csv;
  csv << "row,type,kernel,stride,in_channels,out_channels,input,output,"
         "padding,params,madds\n";
  std::int64_t total_params = 0;
  std::int64_t total_madds = 0;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerEntry& e = spec.layers[i];
    const LayerShape& s = shapes.layers[i];
    ConvSpec conv;
    conv.kind = e.kind;
    conv.kernel_size = e.kernel;
    conv.in_channels = e.in_channels;
    conv.out_channels = e.out_channels;
    conv.stride = e.stride;
    conv.padding = s.padding;
    const CostEstimate cost = layer_cost(conv, s.input_spatial);
    total_params += cost.params;
    total_madds += cost.madds;
    const char* type = e.kind == ConvKind::depthwise ? "conv_dw"
                       : e.kind == ConvKind::pointwise ? "conv_pw" : "conv";
    csv << (i + 1) << "," << type << "," << e.kernel << "," << e.stride << ","
        << e.in_channels << "," << e.out_channels << "," << s.input_spatial
        << "," << s.output_spatial << "," << s.padding << "," << cost.params
        << "," << cost.madds << "\n";
  }
  csv << "total,,,,,,,,," << total_params << "," << total_madds << "\n";
  const std::string csv_path = (fs::path(args.out) / "cost_model.csv").string();
  write_text(csv_path, csv.str());

  json resolved;
  resolved["command"] = "cost-model";
  resolved["model_spec"] = args.model_spec;
  resolved["total_params"] = total_params;
  resolved["total_madds"] = total_madds;
  write_snapshot(args.out, "resolved_cost_model_config.json", resolved);

  std::cout << "trunk parameters " << total_params << ", multiply-adds "
            << total_madds << " per image\n";
  if (!shapes.resolutions.empty() || !shapes.conflicts.empty())
    std::cout << shapes.to_string();
  std::cout << "table: " << csv_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"construction-equipment detection pipeline"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate a synthetic detection dataset with annotations");
  gen->add_option("--out", gen_args.out, "Output directory")->required();
  gen->add_option("--count", gen_args.count, "Number of images");
  gen->add_option("--image-size", gen_args.scene.image_size, "Square side");
  gen->add_option("--classes", gen_args.scene.num_classes, "Shape classes 1-6");
  gen->add_option("--min-objects", gen_args.scene.min_objects, "");
  gen->add_option("--max-objects", gen_args.scene.max_objects, "");
  gen->add_option("--clutter", gen_args.scene.clutter_density,
                  "Expected distractors per image");
  gen->add_option("--occlusion", gen_args.scene.occlusion_probability,
                  "Occlusion probability");
  gen->add_option("--scale-min", gen_args.scene.scale_min, "");
  gen->add_option("--scale-max", gen_args.scene.scale_max, "");
  gen->add_option("--seed", gen_args.scene.seed, "");

  SplitArgs split_args;
  CLI::App* split = app.add_subcommand(
      "split", "Stratified train/val/test split of an annotation set");
  split->add_option("--annotations", split_args.annotations,
                    "Annotation file to split");
  split->add_option("--counts", split_args.counts,
                    "Comma-separated per-class totals (dry run, no files)");
  split->add_option("--out", split_args.out, "Output directory");
  split->add_option("--test-fraction", split_args.spec.test_fraction, "");
  split->add_option("--val-fraction", split_args.spec.val_fraction, "");
  split->add_option("--seed", split_args.spec.seed, "");

  TrainArgs train_args;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Run the deterministic training loop");
  train_cmd->add_option("--config", train_args.config, "Train config JSON")
      ->required();
  train_cmd->add_option("--out", train_args.out,
                        "Output directory (overrides config)");
  train_cmd->add_option("--seed", train_args.seed, "Seed (overrides config)");
  train_cmd->callback([&] {
    train_args.seed_set = train_cmd->count("--seed") > 0;
  });

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Evaluate a checkpoint or a detection file against annotations");
  eval_cmd->add_option("--out", eval_args.out, "Output directory")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "");
  eval_cmd->add_option("--detections", eval_args.detections,
                       "Precomputed detection file");
  eval_cmd->add_option("--annotations", eval_args.annotations, "")->required();
  eval_cmd->add_option("--conf", eval_args.conf, "Confidence threshold");
  eval_cmd->add_option("--nms-iou", eval_args.nms_iou, "");
  eval_cmd->add_option("--top-k", eval_args.top_k, "");

  DetectArgs detect_args;
  CLI::App* detect_cmd =
      app.add_subcommand("detect", "Run detection and write a detection file");
  detect_cmd->add_option("--out", detect_args.out, "Output directory")
      ->required();
  detect_cmd->add_option("--checkpoint", detect_args.checkpoint, "")
      ->required();
  detect_cmd->add_option("--annotations", detect_args.annotations, "");
  detect_cmd->add_option("--images", detect_args.images, "PPM image paths");
  detect_cmd->add_option("--conf", detect_args.conf, "");
  detect_cmd->add_option("--nms-iou", detect_args.nms_iou, "");
  detect_cmd->add_option("--top-k", detect_args.top_k, "");

  BenchArgs bench_args;
  CLI::App* bench_cmd = app.add_subcommand(
      "bench", "Measure detection throughput of a checkpoint");
  bench_cmd->add_option("--out", bench_args.out, "Output directory")
      ->required();
  bench_cmd->add_option("--checkpoint", bench_args.checkpoint, "")->required();
  bench_cmd->add_option("--annotations", bench_args.annotations,
                        "Bench on these images instead of synthetic ones");
  bench_cmd->add_option("--images", bench_args.images,
                        "Synthetic frame count");
  bench_cmd->add_option("--warmup", bench_args.warmup, "Untimed passes");
  bench_cmd->add_option("--reps", bench_args.reps, "Timed passes");
  bench_cmd->add_option("--seed", bench_args.seed, "");
  bench_cmd->add_option("--conf", bench_args.conf, "");
  bench_cmd->add_option("--nms-iou", bench_args.nms_iou, "");
  bench_cmd->add_option("--top-k", bench_args.top_k, "");

  EconArgs econ_args;
  CLI::App* econ_cmd = app.add_subcommand(
      "econ", "Rank device profiles by efficiency and normalized benefit");
  econ_cmd->add_option("--out", econ_args.out, "Output directory")->required();
  econ_cmd->add_option("--profiles", econ_args.profiles,
                       "Device profile JSON file")
      ->required();

  CostModelArgs cost_args;
  CLI::App* cost_cmd = app.add_subcommand(
      "cost-model", "Per-layer parameter and multiply-add table for a model");
  cost_cmd->add_option("--out", cost_args.out, "Output directory")->required();
  cost_cmd->add_option("--model-spec", cost_args.model_spec, "Model spec JSON")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) run_gen_data(gen_args);
    if (split->parsed()) run_split(split_args);
    if (train_cmd->parsed()) run_train(train_args);
    if (eval_cmd->parsed()) run_eval(eval_args);
    if (detect_cmd->parsed()) run_detect(detect_args);
    if (bench_cmd->parsed()) run_bench(bench_args);
    if (econ_cmd->parsed()) run_econ(econ_args);
    if (cost_cmd->parsed()) run_cost_model(cost_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
