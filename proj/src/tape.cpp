// SPDX-License-Identifier: Apache-2.0
#include "eqdet/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace eqdet {

int GradientTape::push(Node n) {
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

void GradientTape::check(Value v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("GradientTape: invalid value handle");
  }
}

Tensor4& GradientTape::grad_buffer(int id) {
  if (grads_[id].data.empty()) {
    const Tensor4& t = nodes_[id].value;
    grads_[id] = Tensor4(t.b, t.c, t.h, t.w);
  }
  return grads_[id];
}

Value GradientTape::watch(const Tensor4& t) {
  Node n;
  n.kind = Node::Kind::leaf;
  n.value = t;
  return Value{push(std::move(n))};
}

Value GradientTape::conv2d(Value input, Value weights, const ConvSpec& spec) {
  check(input);
  check(weights);
  Node n;
  n.kind = Node::Kind::conv;
  n.in0 = input.id;
  n.in1 = weights.id;
  n.conv = spec;
  n.value = conv2d_forward(nodes_[input.id].value, nodes_[weights.id].value, spec);
  return Value{push(std::move(n))};
}

Value GradientTape::batchnorm_train(Value input, Value gamma, Value beta,
                                    double eps,
                                    std::vector<double>* batch_mean,
                                    std::vector<double>* batch_var) {
  check(input);
  check(gamma);
  check(beta);
  const Tensor4& x = nodes_[input.id].value;
  const Tensor4& g = nodes_[gamma.id].value;
  const Tensor4& b = nodes_[beta.id].value;
  if (g.c != x.c || b.c != x.c) {
    throw std::invalid_argument("batchnorm_train: parameter channels " +
                                g.shape_str() + " do not match input " +
                                x.shape_str());
  }
  const int C = x.c;
  const std::int64_t count = static_cast<std::int64_t>(x.b) * x.h * x.w;
  if (count == 0) throw std::invalid_argument("batchnorm_train: empty input");

  Node n;
  n.kind = Node::Kind::bn_train;
  n.in0 = input.id;
  n.in1 = gamma.id;
  n.in2 = beta.id;
  n.bn_mean.assign(C, 0.0);
  n.bn_inv_std.assign(C, 0.0);
  n.value = Tensor4(x.b, x.c, x.h, x.w);

  const int plane = x.h * x.w;
  std::vector<double> var(C, 0.0);
  for (int ch = 0; ch < C; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (int nb = 0; nb < x.b; ++nb) {
      const double* src = &x.data[x.index(nb, ch, 0, 0)];
      for (int i = 0; i < plane; ++i) {
        sum += src[i];
        sq += src[i] * src[i];
      }
    }
    const double mean = sum / static_cast<double>(count);
    double v = sq / static_cast<double>(count) - mean * mean;
    if (v < 0.0) v = 0.0;  // rounding guard
    const double denom = v + eps;
    if (denom <= 0.0) {
      throw std::invalid_argument(
          "batchnorm_train: non-positive variance+eps at channel " +
          std::to_string(ch));
    }
    n.bn_mean[ch] = mean;
    n.bn_inv_std[ch] = 1.0 / std::sqrt(denom);
    var[ch] = v;
    const double ist = n.bn_inv_std[ch];
    const double gc = g.data[ch], bc = b.data[ch];
    for (int nb = 0; nb < x.b; ++nb) {
      const double* src = &x.data[x.index(nb, ch, 0, 0)];
      double* dst = &n.value.data[n.value.index(nb, ch, 0, 0)];
      for (int i = 0; i < plane; ++i) {
        dst[i] = (src[i] - mean) * ist * gc + bc;
      }
    }
  }
  if (batch_mean) *batch_mean = n.bn_mean;
  if (batch_var) *batch_var = var;
  return Value{push(std::move(n))};
}

Value GradientTape::relu6(Value input) {
  check(input);
  Node n;
  n.kind = Node::Kind::relu6;
  n.in0 = input.id;
  n.value = eqdet::relu6(nodes_[input.id].value);
  return Value{push(std::move(n))};
}

Value GradientTape::bias_add(Value input, Value bias) {
  check(input);
  check(bias);
  const Tensor4& x = nodes_[input.id].value;
  const Tensor4& bt = nodes_[bias.id].value;
  if (bt.c != x.c || bt.b != 1 || bt.h != 1 || bt.w != 1) {
    throw std::invalid_argument("bias_add: bias " + bt.shape_str() +
                                " does not match input " + x.shape_str());
  }
  Node n;
  n.kind = Node::Kind::bias_add;
  n.in0 = input.id;
  n.in1 = bias.id;
  n.value = x;
  const int plane = x.h * x.w;
  for (int nb = 0; nb < x.b; ++nb) {
    for (int ch = 0; ch < x.c; ++ch) {
      double* dst = &n.value.data[n.value.index(nb, ch, 0, 0)];
      const double bv = bt.data[ch];
      for (int i = 0; i < plane; ++i) dst[i] += bv;
    }
  }
  return Value{push(std::move(n))};
}

Value GradientTape::sum(Value input) {
  check(input);
  Node n;
  n.kind = Node::Kind::sum;
  n.in0 = input.id;
  n.value = Tensor4(1, 1, 1, 1);
  double acc = 0.0;
  for (double v : nodes_[input.id].value.data) acc += v;
  n.value.data[0] = acc;
  return Value{push(std::move(n))};
}

const Tensor4& GradientTape::tensor(Value v) const {
  check(v);
  return nodes_[v.id].value;
}

void GradientTape::seed_gradient(Value v, const Tensor4& grad) {
  check(v);
  if (!grad.same_shape(nodes_[v.id].value)) {
    throw std::invalid_argument("seed_gradient: shape " + grad.shape_str() +
                                " does not match value " +
                                nodes_[v.id].value.shape_str());
  }
  Tensor4& g = grad_buffer(v.id);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += grad.data[i];
}

void GradientTape::backward(double seed) {
  if (nodes_.empty()) throw std::invalid_argument("backward: empty tape");
  const int last = static_cast<int>(nodes_.size()) - 1;
  if (nodes_[last].value.size() != 1) {
    throw std::invalid_argument(
        "backward: tape does not end in a scalar (last value " +
        nodes_[last].value.shape_str() + ")");
  }
  Tensor4 g(1, 1, 1, 1);
  g.data[0] = seed;
  seed_gradient(Value{last}, g);
  run_backward();
}

void GradientTape::run_backward() {
  if (ran_) throw std::logic_error("GradientTape: backward already ran");
  ran_ = true;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    if (grads_[id].data.empty()) continue;
    backward_node(id);
  }
}

void GradientTape::backward_node(int id) {
  Node& n = nodes_[id];
  const Tensor4& gout = grads_[id];
  switch (n.kind) {
    case Node::Kind::leaf:
      break;
    case Node::Kind::conv: {
      conv2d_backward(nodes_[n.in0].value, nodes_[n.in1].value, n.conv, gout,
                      grad_buffer(n.in0), grad_buffer(n.in1));
      break;
    }
    case Node::Kind::bn_train: {
      const Tensor4& x = nodes_[n.in0].value;
      const Tensor4& gamma = nodes_[n.in1].value;
      Tensor4& gx = grad_buffer(n.in0);
      Tensor4& ggamma = grad_buffer(n.in1);
      Tensor4& gbeta = grad_buffer(n.in2);
      const int C = x.c;
      const int plane = x.h * x.w;
      const double count = static_cast<double>(x.b) * plane;
      for (int ch = 0; ch < C; ++ch) {
        const double mean = n.bn_mean[ch];
        const double ist = n.bn_inv_std[ch];
        const double gc = gamma.data[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int nb = 0; nb < x.b; ++nb) {
          const double* xs = &x.data[x.index(nb, ch, 0, 0)];
          const double* gs = &gout.data[gout.index(nb, ch, 0, 0)];
          for (int i = 0; i < plane; ++i) {
            const double xhat = (xs[i] - mean) * ist;
            sum_dy += gs[i];
            sum_dy_xhat += gs[i] * xhat;
          }
        }
        ggamma.data[ch] += sum_dy_xhat;
        gbeta.data[ch] += sum_dy;
        // dx = gamma*ist/count * (count*dy - sum_dy - xhat*sum_dy_xhat)
        const double k = gc * ist / count;
        for (int nb = 0; nb < x.b; ++nb) {
          const double* xs = &x.data[x.index(nb, ch, 0, 0)];
          const double* gs = &gout.data[gout.index(nb, ch, 0, 0)];
          double* gxs = &gx.data[gx.index(nb, ch, 0, 0)];
          for (int i = 0; i < plane; ++i) {
            const double xhat = (xs[i] - mean) * ist;
            gxs[i] += k * (count * gs[i] - sum_dy - xhat * sum_dy_xhat);
          }
        }
      }
      break;
    }
    case Node::Kind::relu6: {
      const Tensor4& x = nodes_[n.in0].value;
      Tensor4& gx = grad_buffer(n.in0);
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        gx.data[i] += gout.data[i] * relu6_derivative(x.data[i]);
      }
      break;
    }
    case Node::Kind::bias_add: {
      const Tensor4& x = nodes_[n.in0].value;
      Tensor4& gx = grad_buffer(n.in0);
      Tensor4& gb = grad_buffer(n.in1);
      const int plane = x.h * x.w;
      for (int nb = 0; nb < x.b; ++nb) {
        for (int ch = 0; ch < x.c; ++ch) {
          const double* gs = &gout.data[gout.index(nb, ch, 0, 0)];
          double* gxs = &gx.data[gx.index(nb, ch, 0, 0)];
          double acc = 0.0;
          for (int i = 0; i < plane; ++i) {
            gxs[i] += gs[i];
            acc += gs[i];
          }
          gb.data[ch] += acc;
        }
      }
      break;
    }
    case Node::Kind::sum: {
      Tensor4& gx = grad_buffer(n.in0);
      const double g = gout.data[0];
      for (double& v : gx.data) v += g;
      break;
    }
  }
}

bool GradientTape::has_gradient(Value v) const {
  check(v);
  return !grads_[v.id].data.empty();
}

const Tensor4& GradientTape::gradient(Value v) const {
  check(v);
  if (grads_[v.id].data.empty()) {
    throw std::logic_error("gradient: no gradient recorded for value");
  }
  return grads_[v.id];
}

Value ds_block_train(GradientTape& tape, Value input, Value dw_weights,
                     Value dw_gamma, Value dw_beta, Value pw_weights,
                     Value pw_gamma, Value pw_beta, int stride, double dw_eps,
                     double pw_eps) {
  const Tensor4& x = tape.tensor(input);
  const Tensor4& dw_w = tape.tensor(dw_weights);
  ConvSpec dw;
  dw.kind = ConvKind::depthwise;
  dw.kernel_size = dw_w.h;
  dw.in_channels = x.c;
  dw.out_channels = x.c;
  dw.stride = stride;
  dw.padding = same_padding(dw.kernel_size);
  Value v = tape.conv2d(input, dw_weights, dw);
  v = tape.batchnorm_train(v, dw_gamma, dw_beta, dw_eps);
  v = tape.relu6(v);

  ConvSpec pw;
  pw.kind = ConvKind::pointwise;
  pw.kernel_size = 1;
  pw.in_channels = tape.tensor(v).c;
  pw.out_channels = tape.tensor(pw_weights).b;
  pw.stride = 1;
  pw.padding = 0;
  v = tape.conv2d(v, pw_weights, pw);
  v = tape.batchnorm_train(v, pw_gamma, pw_beta, pw_eps);
  return tape.relu6(v);
}

}  // namespace eqdet
