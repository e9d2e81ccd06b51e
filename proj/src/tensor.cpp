// SPDX-License-Identifier: Apache-2.0
#include "eqdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eqdet {

Tensor4::Tensor4(int b_, int c_, int h_, int w_, double fill)
    : b(b_), c(c_), h(h_), w(w_) {
  if (b < 0 || c < 0 || h < 0 || w < 0) {
    throw std::invalid_argument("Tensor4: negative dimension " + shape_str());
  }
  data.assign(static_cast<std::size_t>(size()), fill);
}

bool Tensor4::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor4::fill(double v) { std::fill(data.begin(), data.end(), v); }

std::string Tensor4::shape_str() const {
  return std::to_string(b) + "x" + std::to_string(c) + "x" + std::to_string(h) +
         "x" + std::to_string(w);
}

}  // namespace eqdet
