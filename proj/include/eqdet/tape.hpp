// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "eqdet/nn.hpp"
#include "eqdet/tensor.hpp"

namespace eqdet {

// Handle to a value recorded on a GradientTape.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Tensor4 ops. Forward ops append nodes in program
// order; the backward sweep visits each node exactly once, in reverse.
// Single-writer: one training step owns one tape.
class GradientTape {
 public:
  // Registers a leaf (input or parameter). The tensor is copied.
  Value watch(const Tensor4& t);

  Value conv2d(Value input, Value weights, const ConvSpec& spec);

  // Training-mode batch normalization using per-batch statistics over
  // (batch, height, width). Optionally reports the batch statistics so the
  // caller can maintain running averages.
  Value batchnorm_train(Value input, Value gamma, Value beta, double eps,
                        std::vector<double>* batch_mean = nullptr,
                        std::vector<double>* batch_var = nullptr);

  Value relu6(Value input);

  // Adds a per-channel bias (1,C,1,1) to the input.
  Value bias_add(Value input, Value bias);

  // Reduces to a (1,1,1,1) scalar.
  Value sum(Value input);

  const Tensor4& tensor(Value v) const;

  // Accumulates a gradient at a recorded value (typically a network output).
  void seed_gradient(Value v, const Tensor4& grad);

  // Backward from the last recorded value, which must be scalar-sized.
  void backward(double seed = 1.0);

  // Propagates all seeded gradients down to the leaves.
  void run_backward();

  bool has_gradient(Value v) const;
  const Tensor4& gradient(Value v) const;

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    enum class Kind { leaf, conv, bn_train, relu6, bias_add, sum };
    Kind kind = Kind::leaf;
    Tensor4 value;
    int in0 = -1, in1 = -1, in2 = -1;
    ConvSpec conv;
    std::vector<double> bn_mean, bn_inv_std;  // bn_train cache
  };

  int push(Node n);
  Tensor4& grad_buffer(int id);
  void check(Value v) const;
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<Tensor4> grads_;  // parallel to nodes_; empty until touched
  bool ran_ = false;
};

// Depthwise separable block recorded on a tape (training-mode BN).
Value ds_block_train(GradientTape& tape, Value input, Value dw_weights,
                     Value dw_gamma, Value dw_beta, Value pw_weights,
                     Value pw_gamma, Value pw_beta, int stride, double dw_eps,
                     double pw_eps);

}  // namespace eqdet
