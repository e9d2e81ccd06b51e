// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace eqdet {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;  // added outside the square root

  void validate() const;
};

// Step-decay schedule: the rate drops by a fixed factor every decay_steps
// optimization steps, holding constant in between. Computed by repeated
// multiplication so the value at each boundary is exact.
struct LrSchedule {
  double base_lr = 1e-4;
  double decay_rate = 0.95;
  std::int64_t decay_steps = 1000;

  void validate() const;
  double learning_rate(std::int64_t step) const;  // step counts from 0
};

// Adam with bias correction. Parameter tensors register once as slots; the
// caller owns the parameter and gradient storage and hands both to update().
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const AdamParams& params = AdamParams{});

  int add_slot(std::size_t size);
  int num_slots() const { return static_cast<int>(m_.size()); }
  std::size_t slot_size(int slot) const;

  // Advances the shared step counter; call once before the updates of a step.
  void begin_step();
  std::int64_t step_count() const { return t_; }

  // One Adam update for a slot. Rejects non-finite gradients.
  void update(int slot, double lr, const double* grad, double* param,
              std::size_t n);

  const AdamParams& params() const { return params_; }

  // Bit-exact binary state round-trip (moments and step counter). A freshly
  // constructed optimizer adopts the stored slot layout; one that already
  // has slots rejects a stream whose layout differs.
  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  AdamParams params_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace eqdet
