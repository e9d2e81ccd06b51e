// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "eqdet/model.hpp"
#include "eqdet/tensor.hpp"

namespace eqdet {

// One deployment platform with its measured throughput, power draw, and
// price. `map` is the accuracy the platform achieved (percent); negative
// means not reported.
struct DeviceProfile {
  std::string name;
  double fps = 0.0;
  double watts = 0.0;
  double price = 0.0;
  double map = -1.0;

  void validate() const;
};

// Throughput per unit power.
double efficiency(const DeviceProfile& p);

// How many times faster `fps` is than `baseline_fps`.
double speedup_ratio(double fps, double baseline_fps);

// The cost-aware figure of merit used to rank devices. The ratio
// fps / (watts * price) rewards throughput and penalizes both operating
// power and purchase price; it is normalized so the best device scores 1.
// This exact form is a modeling choice — surfaced here and in every report
// header — selected because it makes a cheap low-power accelerator beat a
// fast but expensive workstation, which matches how such devices rank in
// the field.
inline constexpr const char* kBenefitFormula = "fps / (watts * price)";

struct EconRow {
  DeviceProfile profile;
  double efficiency = 0.0;         // fps per watt
  double raw_benefit = 0.0;        // fps / (watts * price)
  double normalized_benefit = 0.0; // raw / max raw, in (0, 1]
};

struct EconReport {
  std::vector<EconRow> rows;     // input order
  std::vector<int> ranking;      // indices into rows, best first
};

// Computes efficiency and benefit for every profile and ranks them by
// normalized benefit (descending; ties keep input order). Requires at least
// one profile.
EconReport normalized_benefit(const std::vector<DeviceProfile>& profiles);

// Profile file IO: a JSON array of {name, fps, watts, price, map?}.
std::vector<DeviceProfile> read_device_profiles(const std::string& path);
std::vector<DeviceProfile> device_profiles_from_json(const std::string& text);
void write_device_profiles(const std::vector<DeviceProfile>& profiles,
                           const std::string& path);

// Report writers. Both start with a header naming the benefit formula.
std::string econ_report_csv(const EconReport& report);
std::string econ_report_json(const EconReport& report);

// Frames per second from a frame count and an elapsed time.
double fps_value(std::int64_t frames, double seconds);

struct BenchmarkResult {
  int images = 0;
  int repetitions = 0;
  double seconds = 0.0;   // timed wall time, warmup excluded
  double fps = 0.0;       // repetitions * images / seconds
  double min_fps = 0.0;   // slowest single repetition
  double max_fps = 0.0;   // fastest single repetition
};

// Times `pass()` (one full sweep over the image list) with a monotonic
// clock, single-threaded: `warmup` untimed passes, then `repetitions` timed
// ones. `images` is the number of frames one pass covers.
BenchmarkResult benchmark_fps(const std::function<void()>& pass, int images,
                              int warmup, int repetitions);

// Convenience wrapper: one pass = detect over every image.
BenchmarkResult benchmark_fps(const Model& model,
                              const std::vector<Tensor4>& images,
                              double conf_threshold, double nms_iou, int top_k,
                              int warmup, int repetitions);

}  // namespace eqdet
