// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "eqdet/tensor.hpp"

namespace eqdet {

enum class ConvKind { standard, depthwise, pointwise };

// Convolution layer description. Weight layout:
//   standard:  (N, M, K, K)
//   depthwise: (M, 1, K, K), one kernel per input channel
//   pointwise: (N, M, 1, 1)
struct ConvSpec {
  ConvKind kind = ConvKind::standard;
  int kernel_size = 3;   // D_K
  int in_channels = 0;   // M
  int out_channels = 0;  // N
  int stride = 1;
  int padding = 0;

  void validate() const;  // throws std::invalid_argument
};

struct CostEstimate {
  std::int64_t params = 0;
  std::int64_t madds = 0;
};

// floor((extent + 2*pad - kernel) / stride) + 1
int conv_output_extent(int extent, int kernel, int stride, int padding);

int same_padding(int kernel);  // floor(K/2)

Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& weights,
                       const ConvSpec& spec);

// Gradients of a conv w.r.t. input and weights given the output gradient.
void conv2d_backward(const Tensor4& input, const Tensor4& weights,
                     const ConvSpec& spec, const Tensor4& grad_out,
                     Tensor4& grad_input, Tensor4& grad_weights);

// Batch normalization parameters for one layer. gamma/beta are (1,C,1,1)
// tensors so the optimizer and tape can treat them like any other parameter.
struct BnParams {
  Tensor4 gamma;
  Tensor4 beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-3;

  static BnParams identity(int channels, double eps = 1e-3);
  int channels() const { return gamma.c; }
};

// Inference form: (x - running_mean) / sqrt(running_var + eps) * gamma + beta
Tensor4 batchnorm_infer(const Tensor4& input, const BnParams& bn);

Tensor4 relu6(const Tensor4& input);
double relu6_scalar(double x);
double relu6_derivative(double x);  // 0 at x in {0, 6}

// Depthwise separable block: 3x3 depthwise conv -> BN -> ReLU6
// -> 1x1 pointwise conv -> BN -> ReLU6.
struct DsBlockParams {
  Tensor4 dw_weights;  // (M,1,3,3)
  BnParams dw_bn;
  Tensor4 pw_weights;  // (N,M,1,1)
  BnParams pw_bn;
  int stride = 1;
};

Tensor4 ds_block_forward(const Tensor4& input, const DsBlockParams& params);

// Analytic parameter / multiply-add counts for a single convolution at
// feature-map size D_F.
CostEstimate layer_cost(const ConvSpec& spec, int feature_size);

// Cost of a depthwise (KxK, M channels) + pointwise (M -> N) pair:
// params = K^2*M + N*M, madds = K^2*D_F^2*M + M*N*D_F^2.
CostEstimate separable_pair_cost(int kernel, int in_channels, int out_channels,
                                 int feature_size);

// madds ratio separable/standard = 1/N + 1/K^2 (independent of D_F).
double separable_madds_ratio(int kernel, int out_channels);

}  // namespace eqdet
