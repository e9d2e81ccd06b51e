// SPDX-License-Identifier: Apache-2.0
#include "eqdet/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace eqdet {

namespace {

constexpr std::uint32_t kStateMagic = 0x4D414441;  // "ADAM"
constexpr std::uint32_t kStateVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("optimizer state: truncated stream");
}

}  // namespace

void AdamParams::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    throw std::invalid_argument("AdamParams: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("AdamParams: beta2 must be in [0, 1)");
  if (!(epsilon > 0.0))
    throw std::invalid_argument("AdamParams: epsilon must be positive");
}

void LrSchedule::validate() const {
  if (!(base_lr > 0.0))
    throw std::invalid_argument("LrSchedule: base_lr must be positive");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0))
    throw std::invalid_argument("LrSchedule: decay_rate must be in (0, 1]");
  if (decay_steps <= 0)
    throw std::invalid_argument("LrSchedule: decay_steps must be positive");
}

double LrSchedule::learning_rate(std::int64_t step) const {
  validate();
  if (step < 0) throw std::invalid_argument("LrSchedule: step must be >= 0");
  const std::int64_t drops = step / decay_steps;
  double lr = base_lr;
  for (std::int64_t i = 0; i < drops; ++i) lr *= decay_rate;
  return lr;
}

AdamOptimizer::AdamOptimizer(const AdamParams& params) : params_(params) {
  params_.validate();
}

int AdamOptimizer::add_slot(std::size_t size) {
  if (size == 0)
    throw std::invalid_argument("AdamOptimizer: slot size must be positive");
  m_.emplace_back(size, 0.0);
  v_.emplace_back(size, 0.0);
  return static_cast<int>(m_.size()) - 1;
}

std::size_t AdamOptimizer::slot_size(int slot) const {
  if (slot < 0 || slot >= num_slots())
    throw std::out_of_range("AdamOptimizer: bad slot index");
  return m_[slot].size();
}

void AdamOptimizer::begin_step() { ++t_; }

void AdamOptimizer::update(int slot, double lr, const double* grad,
                           double* param, std::size_t n) {
  if (slot < 0 || slot >= num_slots())
    throw std::out_of_range("AdamOptimizer: bad slot index");
  if (t_ == 0)
    throw std::logic_error("AdamOptimizer: begin_step() before update()");
  if (n != m_[slot].size())
    throw std::invalid_argument("AdamOptimizer: size does not match slot");

  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(grad[i]))
      throw std::runtime_error("AdamOptimizer: non-finite gradient");

  const double b1 = params_.beta1;
  const double b2 = params_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  double* m = m_[slot].data();
  double* v = v_[slot].data();
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + params_.epsilon);
  }
}

void AdamOptimizer::save(std::ostream& out) const {
  write_pod(out, kStateMagic);
  write_pod(out, kStateVersion);
  write_pod(out, params_.beta1);
  write_pod(out, params_.beta2);
  write_pod(out, params_.epsilon);
  write_pod(out, t_);
  write_pod(out, static_cast<std::uint64_t>(m_.size()));
  for (std::size_t s = 0; s < m_.size(); ++s) {
    write_pod(out, static_cast<std::uint64_t>(m_[s].size()));
    out.write(reinterpret_cast<const char*>(m_[s].data()),
              static_cast<std::streamsize>(m_[s].size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(v_[s].data()),
              static_cast<std::streamsize>(v_[s].size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("optimizer state: write failed");
}

void AdamOptimizer::load(std::istream& in) {
  std::uint32_t magic = 0;
  std::uint32_t version = 0;
  read_pod(in, magic);
  read_pod(in, version);
  if (magic != kStateMagic)
    throw std::runtime_error("optimizer state: bad magic");
  if (version != kStateVersion)
    throw std::runtime_error("optimizer state: unsupported version");
  read_pod(in, params_.beta1);
  read_pod(in, params_.beta2);
  read_pod(in, params_.epsilon);
  params_.validate();
  read_pod(in, t_);
  std::uint64_t slots = 0;
  read_pod(in, slots);
  // An optimizer that already has slots must agree with the stored layout;
  // a freshly constructed one adopts the layout from the stream.
  const bool had_slots = !m_.empty();
  if (had_slots && slots != m_.size())
    throw std::invalid_argument("optimizer state: slot count mismatch");
  std::vector<std::size_t> expected(slots, 0);
  if (had_slots)
    for (std::uint64_t s = 0; s < slots; ++s) expected[s] = m_[s].size();
  m_.assign(slots, {});
  v_.assign(slots, {});
  for (std::uint64_t s = 0; s < slots; ++s) {
    std::uint64_t size = 0;
    read_pod(in, size);
    if (had_slots && size != expected[s])
      throw std::invalid_argument("optimizer state: slot size mismatch");
    m_[s].resize(size);
    v_[s].resize(size);
    in.read(reinterpret_cast<char*>(m_[s].data()),
            static_cast<std::streamsize>(size * sizeof(double)));
    in.read(reinterpret_cast<char*>(v_[s].data()),
            static_cast<std::streamsize>(size * sizeof(double)));
    if (!in) throw std::runtime_error("optimizer state: truncated stream");
  }
}

}  // namespace eqdet
