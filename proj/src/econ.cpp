// SPDX-License-Identifier: Apache-2.0
#include "eqdet/econ.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace eqdet {

using nlohmann::json;

void DeviceProfile::validate() const {
  if (name.empty())
    throw std::invalid_argument("DeviceProfile: name must not be empty");
  if (!(fps > 0.0))
    throw std::invalid_argument("DeviceProfile: fps must be > 0");
  if (!(watts > 0.0))
    throw std::invalid_argument("DeviceProfile: watts must be > 0");
  if (!(price > 0.0))
    throw std::invalid_argument("DeviceProfile: price must be > 0");
}

double efficiency(const DeviceProfile& p) {
  p.validate();
  return p.fps / p.watts;
}

double speedup_ratio(double fps, double baseline_fps) {
  if (!(fps > 0.0) || !(baseline_fps > 0.0))
    throw std::invalid_argument("speedup_ratio: rates must be > 0");
  return fps / baseline_fps;
}

EconReport normalized_benefit(const std::vector<DeviceProfile>& profiles) {
  if (profiles.empty())
    throw std::invalid_argument("normalized_benefit: need at least one device");

  EconReport report;
  double max_raw = 0.0;
  for (const DeviceProfile& p : profiles) {
    EconRow row;
    row.profile = p;
    row.efficiency = efficiency(p);
    row.raw_benefit = p.fps / (p.watts * p.price);
    max_raw = std::max(max_raw, row.raw_benefit);
    report.rows.push_back(std::move(row));
  }
  for (EconRow& row : report.rows)
    row.normalized_benefit = row.raw_benefit / max_raw;

  report.ranking.resize(report.rows.size());
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](int a, int b) {
                     return report.rows[a].normalized_benefit >
                            report.rows[b].normalized_benefit;
                   });
  return report;
}

std::vector<DeviceProfile> device_profiles_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("device profiles: ") + e.what());
  }
  if (!j.is_array())
    throw std::invalid_argument("device profiles: expected a JSON array");
  std::vector<DeviceProfile> profiles;
  for (const json& entry : j) {
    DeviceProfile p;
    try {
      p.name = entry.at("name").get<std::string>();
      p.fps = entry.at("fps").get<double>();
      p.watts = entry.at("watts").get<double>();
      p.price = entry.at("price").get<double>();
      p.map = entry.value("map", p.map);
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("device profiles: ") + e.what());
    }
    p.validate();
    profiles.push_back(std::move(p));
  }
  return profiles;
}

std::vector<DeviceProfile> read_device_profiles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read device profiles: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return device_profiles_from_json(buffer.str());
}

void write_device_profiles(const std::vector<DeviceProfile>& profiles,
                           const std::string& path) {
  json j = json::array();
  for (const DeviceProfile& p : profiles) {
    json entry;
    entry["name"] = p.name;
    entry["fps"] = p.fps;
    entry["watts"] = p.watts;
    entry["price"] = p.price;
    if (p.map >= 0.0) entry["map"] = p.map;
    j.push_back(std::move(entry));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write device profiles: " + path);
  out << j.dump(2) << "\n";
}

std::string econ_report_csv(const EconReport& report) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "# benefit = " << kBenefitFormula
      << ", normalized to the best device\n";
  out << "rank,name,fps,watts,price,map,efficiency,raw_benefit,"
         "normalized_benefit\n";
  for (size_t r = 0; r < report.ranking.size(); ++r) {
    const EconRow& row = report.rows[report.ranking[r]];
    out << (r + 1) << "," << row.profile.name << "," << row.profile.fps << ","
        << row.profile.watts << "," << row.profile.price << ",";
    if (row.profile.map >= 0.0) out << row.profile.map;
    out << "," << row.efficiency << "," << row.raw_benefit << ","
        << row.normalized_benefit << "\n";
  }
  return out.str();
}

std::string econ_report_json(const EconReport& report) {
  json j;
  j["benefit_formula"] = kBenefitFormula;
  j["note"] = "normalized so the best device scores 1";
  j["devices"] = json::array();
  for (const EconRow& row : report.rows) {
    json entry;
    entry["name"] = row.profile.name;
    entry["fps"] = row.profile.fps;
    entry["watts"] = row.profile.watts;
    entry["price"] = row.profile.price;
    if (row.profile.map >= 0.0) entry["map"] = row.profile.map;
    entry["efficiency"] = row.efficiency;
    entry["raw_benefit"] = row.raw_benefit;
    entry["normalized_benefit"] = row.normalized_benefit;
    j["devices"].push_back(std::move(entry));
  }
  j["ranking"] = json::array();
  for (int idx : report.ranking)
    j["ranking"].push_back(report.rows[idx].profile.name);
  return j.dump(2);
}

double fps_value(std::int64_t frames, double seconds) {
  if (frames < 1) throw std::invalid_argument("fps_value: frames must be >= 1");
  if (!(seconds > 0.0))
    throw std::invalid_argument("fps_value: seconds must be > 0");
  return static_cast<double>(frames) / seconds;
}

BenchmarkResult benchmark_fps(const std::function<void()>& pass, int images,
                              int warmup, int repetitions) {
  if (!pass) throw std::invalid_argument("benchmark_fps: pass must be callable");
  if (images < 1)
    throw std::invalid_argument("benchmark_fps: need at least one image");
  if (warmup < 0)
    throw std::invalid_argument("benchmark_fps: warmup must be >= 0");
  if (repetitions < 1)
    throw std::invalid_argument("benchmark_fps: repetitions must be >= 1");

  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) pass();

  BenchmarkResult result;
  result.images = images;
  result.repetitions = repetitions;
  double min_rep = std::numeric_limits<double>::infinity();
  double max_rep = 0.0;
  for (int r = 0; r < repetitions; ++r) {
    const clock::time_point t0 = clock::now();
    pass();
    const double elapsed = std::chrono::duration<double>(clock::now() - t0)
                               .count();
    result.seconds += elapsed;
    const double rep_fps =
        elapsed > 0.0 ? images / elapsed : std::numeric_limits<double>::infinity();
    min_rep = std::min(min_rep, rep_fps);
    max_rep = std::max(max_rep, rep_fps);
  }
  result.fps = result.seconds > 0.0
                   ? fps_value(static_cast<std::int64_t>(repetitions) * images,
                               result.seconds)
                   : std::numeric_limits<double>::infinity();
  result.min_fps = min_rep;
  result.max_fps = max_rep;
  return result;
}

BenchmarkResult benchmark_fps(const Model& model,
                              const std::vector<Tensor4>& images,
                              double conf_threshold, double nms_iou, int top_k,
                              int warmup, int repetitions) {
  if (images.empty())
    throw std::invalid_argument("benchmark_fps: need at least one image");
  const auto pass = [&] {
    for (const Tensor4& image : images)
      model.detect(image, conf_threshold, nms_iou, top_k);
  };
  return benchmark_fps(pass, static_cast<int>(images.size()), warmup,
                       repetitions);
}

}  // namespace eqdet
