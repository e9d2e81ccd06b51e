// SPDX-License-Identifier: Apache-2.0
#include "eqdet/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace eqdet {

namespace {

std::string kind_name(ConvKind k) {
  switch (k) {
    case ConvKind::standard: return "standard";
    case ConvKind::depthwise: return "depthwise";
    case ConvKind::pointwise: return "pointwise";
  }
  return "?";
}

void check_conv_shapes(const Tensor4& input, const Tensor4& weights,
                       const ConvSpec& spec) {
  spec.validate();
  if (input.size() == 0) {
    throw std::invalid_argument("conv2d: zero-size input " + input.shape_str());
  }
  if (input.c != spec.in_channels) {
    throw std::invalid_argument(
        "conv2d: input has " + std::to_string(input.c) +
        " channels, spec expects M=" + std::to_string(spec.in_channels) +
        " (input " + input.shape_str() + ")");
  }
  const int K = spec.kernel_size;
  bool ok = false;
  if (spec.kind == ConvKind::depthwise) {
    ok = weights.b == spec.in_channels && weights.c == 1 && weights.h == K &&
         weights.w == K;
  } else {
    ok = weights.b == spec.out_channels && weights.c == spec.in_channels &&
         weights.h == K && weights.w == K;
  }
  if (!ok) {
    throw std::invalid_argument(
        "conv2d: weight shape " + weights.shape_str() + " inconsistent with " +
        kind_name(spec.kind) + " spec (K=" + std::to_string(K) +
        ", M=" + std::to_string(spec.in_channels) +
        ", N=" + std::to_string(spec.out_channels) + ")");
  }
}

// Output row/col range for which the input index y*stride - pad + k stays
// inside [0, extent).
inline void valid_range(int out_extent, int in_extent, int stride, int pad,
                        int k, int& lo, int& hi) {
  int t = pad - k;
  lo = t <= 0 ? 0 : (t + stride - 1) / stride;
  int top = (in_extent - 1 + pad - k) / stride + 1;
  hi = top < out_extent ? top : out_extent;
  if (hi < lo) hi = lo;
}

}  // namespace

void ConvSpec::validate() const {
  if (kernel_size < 1) throw std::invalid_argument("ConvSpec: kernel_size < 1");
  if (in_channels < 1 || out_channels < 1) {
    throw std::invalid_argument("ConvSpec: channel counts must be positive");
  }
  if (stride != 1 && stride != 2) {
    throw std::invalid_argument("ConvSpec: stride must be 1 or 2");
  }
  if (padding < 0) throw std::invalid_argument("ConvSpec: negative padding");
  if (kind == ConvKind::pointwise && kernel_size != 1) {
    throw std::invalid_argument("ConvSpec: pointwise requires kernel_size 1");
  }
  if (kind == ConvKind::depthwise && out_channels != in_channels) {
    throw std::invalid_argument(
        "ConvSpec: depthwise requires out_channels == in_channels (N=" +
        std::to_string(out_channels) + ", M=" + std::to_string(in_channels) +
        ")");
  }
}

int conv_output_extent(int extent, int kernel, int stride, int padding) {
  return (extent + 2 * padding - kernel) / stride + 1;
}

int same_padding(int kernel) { return kernel / 2; }

Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& weights,
                       const ConvSpec& spec) {
  check_conv_shapes(input, weights, spec);
  const int K = spec.kernel_size, S = spec.stride, P = spec.padding;
  const int H = input.h, W = input.w;
  const int OH = conv_output_extent(H, K, S, P);
  const int OW = conv_output_extent(W, K, S, P);
  if (OH <= 0 || OW <= 0) {
    throw std::invalid_argument("conv2d: empty output for input " +
                                input.shape_str());
  }
  const bool dw = spec.kind == ConvKind::depthwise;
  Tensor4 out(input.b, spec.out_channels, OH, OW, 0.0);

  for (int n = 0; n < input.b; ++n) {
    for (int o = 0; o < spec.out_channels; ++o) {
      double* out_plane = &out.data[out.index(n, o, 0, 0)];
      const int m_lo = dw ? o : 0;
      const int m_hi = dw ? o + 1 : spec.in_channels;
      for (int m = m_lo; m < m_hi; ++m) {
        const double* in_plane = &input.data[input.index(n, m, 0, 0)];
        const double* wk = dw ? &weights.data[weights.index(o, 0, 0, 0)]
                              : &weights.data[weights.index(o, m, 0, 0)];
        for (int ky = 0; ky < K; ++ky) {
          int y0, y1;
          valid_range(OH, H, S, P, ky, y0, y1);
          for (int kx = 0; kx < K; ++kx) {
            const double wv = wk[ky * K + kx];
            int x0, x1;
            valid_range(OW, W, S, P, kx, x0, x1);
            for (int y = y0; y < y1; ++y) {
              const int iy = y * S - P + ky;
              double* out_row = out_plane + static_cast<std::size_t>(y) * OW;
              const double* in_row =
                  in_plane + static_cast<std::size_t>(iy) * W - P + kx;
              if (S == 1) {
                for (int x = x0; x < x1; ++x) out_row[x] += wv * in_row[x];
              } else {
                for (int x = x0; x < x1; ++x) out_row[x] += wv * in_row[x * S];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor4& input, const Tensor4& weights,
                     const ConvSpec& spec, const Tensor4& grad_out,
                     Tensor4& grad_input, Tensor4& grad_weights) {
  check_conv_shapes(input, weights, spec);
  const int K = spec.kernel_size, S = spec.stride, P = spec.padding;
  const int H = input.h, W = input.w;
  const int OH = grad_out.h, OW = grad_out.w;
  if (grad_out.b != input.b || grad_out.c != spec.out_channels ||
      OH != conv_output_extent(H, K, S, P) ||
      OW != conv_output_extent(W, K, S, P)) {
    throw std::invalid_argument("conv2d_backward: grad shape " +
                                grad_out.shape_str() +
                                " inconsistent with input " + input.shape_str());
  }
  if (!grad_input.same_shape(input)) grad_input = Tensor4(input.b, input.c, H, W);
  if (!grad_weights.same_shape(weights)) {
    grad_weights = Tensor4(weights.b, weights.c, weights.h, weights.w);
  }
  const bool dw = spec.kind == ConvKind::depthwise;

  for (int n = 0; n < input.b; ++n) {
    for (int o = 0; o < spec.out_channels; ++o) {
      const double* go_plane = &grad_out.data[grad_out.index(n, o, 0, 0)];
      const int m_lo = dw ? o : 0;
      const int m_hi = dw ? o + 1 : spec.in_channels;
      for (int m = m_lo; m < m_hi; ++m) {
        const double* in_plane = &input.data[input.index(n, m, 0, 0)];
        double* gi_plane = &grad_input.data[grad_input.index(n, m, 0, 0)];
        const double* wk = dw ? &weights.data[weights.index(o, 0, 0, 0)]
                              : &weights.data[weights.index(o, m, 0, 0)];
        double* gw = dw ? &grad_weights.data[grad_weights.index(o, 0, 0, 0)]
                        : &grad_weights.data[grad_weights.index(o, m, 0, 0)];
        for (int ky = 0; ky < K; ++ky) {
          int y0, y1;
          valid_range(OH, H, S, P, ky, y0, y1);
          for (int kx = 0; kx < K; ++kx) {
            const double wv = wk[ky * K + kx];
            int x0, x1;
            valid_range(OW, W, S, P, kx, x0, x1);
            double wacc = 0.0;
            for (int y = y0; y < y1; ++y) {
              const int iy = y * S - P + ky;
              const double* go_row =
                  go_plane + static_cast<std::size_t>(y) * OW;
              const double* in_row =
                  in_plane + static_cast<std::size_t>(iy) * W - P + kx;
              double* gi_row =
                  gi_plane + static_cast<std::size_t>(iy) * W - P + kx;
              if (S == 1) {
                for (int x = x0; x < x1; ++x) {
                  const double g = go_row[x];
                  gi_row[x] += wv * g;
                  wacc += g * in_row[x];
                }
              } else {
                for (int x = x0; x < x1; ++x) {
                  const double g = go_row[x];
                  gi_row[x * S] += wv * g;
                  wacc += g * in_row[x * S];
                }
              }
            }
            gw[ky * K + kx] += wacc;
          }
        }
      }
    }
  }
}

BnParams BnParams::identity(int channels, double eps) {
  BnParams bn;
  bn.gamma = Tensor4(1, channels, 1, 1, 1.0);
  bn.beta = Tensor4(1, channels, 1, 1, 0.0);
  bn.running_mean.assign(channels, 0.0);
  bn.running_var.assign(channels, 1.0);
  bn.eps = eps;
  return bn;
}

Tensor4 batchnorm_infer(const Tensor4& input, const BnParams& bn) {
  if (input.c != bn.channels()) {
    throw std::invalid_argument("batchnorm: input " + input.shape_str() +
                                " does not match " +
                                std::to_string(bn.channels()) + " channels");
  }
  Tensor4 out(input.b, input.c, input.h, input.w);
  const int plane = input.h * input.w;
  for (int n = 0; n < input.b; ++n) {
    for (int ch = 0; ch < input.c; ++ch) {
      const double denom = bn.running_var[ch] + bn.eps;
      if (denom <= 0.0) {
        throw std::invalid_argument(
            "batchnorm: non-positive variance+eps at channel " +
            std::to_string(ch));
      }
      const double inv_std = 1.0 / std::sqrt(denom);
      const double g = bn.gamma.data[ch];
      const double b = bn.beta.data[ch];
      const double mean = bn.running_mean[ch];
      const double* src = &input.data[input.index(n, ch, 0, 0)];
      double* dst = &out.data[out.index(n, ch, 0, 0)];
      for (int i = 0; i < plane; ++i) {
        dst[i] = (src[i] - mean) * inv_std * g + b;
      }
    }
  }
  return out;
}

double relu6_scalar(double x) {
  if (x < 0.0) return 0.0;
  if (x > 6.0) return 6.0;
  return x;
}

double relu6_derivative(double x) { return (x > 0.0 && x < 6.0) ? 1.0 : 0.0; }

Tensor4 relu6(const Tensor4& input) {
  Tensor4 out = input;
  for (double& v : out.data) v = relu6_scalar(v);
  return out;
}

Tensor4 ds_block_forward(const Tensor4& input, const DsBlockParams& params) {
  ConvSpec dw;
  dw.kind = ConvKind::depthwise;
  dw.kernel_size = params.dw_weights.h;
  dw.in_channels = input.c;
  dw.out_channels = input.c;
  dw.stride = params.stride;
  dw.padding = same_padding(dw.kernel_size);
  Tensor4 x = conv2d_forward(input, params.dw_weights, dw);
  x = batchnorm_infer(x, params.dw_bn);
  x = relu6(x);

  ConvSpec pw;
  pw.kind = ConvKind::pointwise;
  pw.kernel_size = 1;
  pw.in_channels = x.c;
  pw.out_channels = params.pw_weights.b;
  pw.stride = 1;
  pw.padding = 0;
  x = conv2d_forward(x, params.pw_weights, pw);
  x = batchnorm_infer(x, params.pw_bn);
  return relu6(x);
}

CostEstimate layer_cost(const ConvSpec& spec, int feature_size) {
  spec.validate();
  if (feature_size < 1) {
    throw std::invalid_argument("layer_cost: feature_size must be positive");
  }
  const std::int64_t K2 =
      static_cast<std::int64_t>(spec.kernel_size) * spec.kernel_size;
  const std::int64_t F2 =
      static_cast<std::int64_t>(feature_size) * feature_size;
  const std::int64_t M = spec.in_channels;
  const std::int64_t N = spec.out_channels;
  CostEstimate cost;
  switch (spec.kind) {
    case ConvKind::standard:
      cost.params = K2 * N * M;
      cost.madds = K2 * F2 * N * M;
      break;
    case ConvKind::depthwise:
      cost.params = K2 * M;
      cost.madds = K2 * F2 * M;
      break;
    case ConvKind::pointwise:
      cost.params = N * M;
      cost.madds = N * M * F2;
      break;
  }
  return cost;
}

CostEstimate separable_pair_cost(int kernel, int in_channels, int out_channels,
                                 int feature_size) {
  ConvSpec dw;
  dw.kind = ConvKind::depthwise;
  dw.kernel_size = kernel;
  dw.in_channels = in_channels;
  dw.out_channels = in_channels;
  ConvSpec pw;
  pw.kind = ConvKind::pointwise;
  pw.kernel_size = 1;
  pw.in_channels = in_channels;
  pw.out_channels = out_channels;
  CostEstimate a = layer_cost(dw, feature_size);
  CostEstimate b = layer_cost(pw, feature_size);
  return {a.params + b.params, a.madds + b.madds};
}

double separable_madds_ratio(int kernel, int out_channels) {
  return 1.0 / out_channels + 1.0 / (static_cast<double>(kernel) * kernel);
}

}  // namespace eqdet
