// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace eqdet {

// Dense rank-4 array in (batch, channels, height, width) order, row-major.
struct Tensor4 {
  int b = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int b_, int c_, int h_, int w_, double fill = 0.0);

  std::int64_t size() const {
    return static_cast<std::int64_t>(b) * c * h * w;
  }

  std::size_t index(int n, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(n) * c + ch) * h + y) * w + x;
  }

  double& at(int n, int ch, int y, int x) { return data[index(n, ch, y, x)]; }
  double at(int n, int ch, int y, int x) const { return data[index(n, ch, y, x)]; }

  bool same_shape(const Tensor4& o) const {
    return b == o.b && c == o.c && h == o.h && w == o.w;
  }

  bool all_finite() const;
  void fill(double v);
  std::string shape_str() const;  // e.g. "8x3x96x96"
};

}  // namespace eqdet
