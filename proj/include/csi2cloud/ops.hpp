// SPDX-License-Identifier: Apache-2.0
//
// Layer primitives over Tensor: pointwise Conv1D, batch norm, ReLU, global
// max pool, fully connected, MSE, plus reshape/scale glue. Every op
// registers its gradient rule with the recording graph.
#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "csi2cloud/tensor.hpp"

namespace c2c {

// ---------------------------------------------------------------------------
// conv1d, kernel size fixed to 1: a shared per-position linear map.
// input C_in x L, weight C_out x C_in x 1, bias C_out  ->  C_out x L.
// ---------------------------------------------------------------------------
inline Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() == 2, "conv1d: input must be C_in x L");
  require(weight.rank() == 3 && weight.extent(2) == 1,
          "conv1d: weight must be C_out x C_in x 1 (pointwise kernel)");
  const std::size_t c_in = input.extent(0), len = input.extent(1);
  const std::size_t c_out = weight.extent(0);
  require(weight.extent(1) == c_in, "conv1d: weight C_in mismatch");
  require(bias.rank() == 1 && bias.extent(0) == c_out, "conv1d: bias size mismatch");

  std::vector<double> out(c_out * len);
  const double* x = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  for (std::size_t c = 0; c < c_out; ++c) {
    double* row = &out[c * len];
    for (std::size_t l = 0; l < len; ++l) row[l] = b[c];
    for (std::size_t i = 0; i < c_in; ++i) {
      const double wci = w[c * c_in + i];
      const double* xi = &x[i * len];
      for (std::size_t l = 0; l < len; ++l) row[l] += wci * xi[l];
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.node();
  auto bw = [in_node, w_node, b_node, c_in, c_out, len](detail::Node& self) {
    const double* go = self.gbuf.data();
    const double* x = in_node->data.data();
    const double* w = w_node->data.data();
    if (in_node->needs_grad) {
      double* gx = in_node->gbuf.data();
      for (std::size_t c = 0; c < c_out; ++c) {
        const double* grow = &go[c * len];
        for (std::size_t i = 0; i < c_in; ++i) {
          const double wci = w[c * c_in + i];
          double* gxi = &gx[i * len];
          for (std::size_t l = 0; l < len; ++l) gxi[l] += wci * grow[l];
        }
      }
    }
    if (w_node->needs_grad) {
      double* gw = w_node->gbuf.data();
      for (std::size_t c = 0; c < c_out; ++c) {
        const double* grow = &go[c * len];
        for (std::size_t i = 0; i < c_in; ++i) {
          const double* xi = &x[i * len];
          double acc = 0.0;
          for (std::size_t l = 0; l < len; ++l) acc += grow[l] * xi[l];
          gw[c * c_in + i] += acc;
        }
      }
    }
    if (b_node->needs_grad) {
      double* gb = b_node->gbuf.data();
      for (std::size_t c = 0; c < c_out; ++c) {
        const double* grow = &go[c * len];
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += grow[l];
        gb[c] += acc;
      }
    }
  };
  return detail::make_op_node({c_out, len}, std::move(out), {input, weight, bias},
                              std::move(bw), "conv1d");
}

// ---------------------------------------------------------------------------
// Batch normalization over the length axis, one statistic per channel.
// ---------------------------------------------------------------------------

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  bool initialized = false;

  void reset(std::size_t channels) {
    running_mean.assign(channels, 0.0);
    running_var.assign(channels, 1.0);
    initialized = true;
  }
};

enum class BatchNormMode {
  kTrain,     // per-input statistics, running averages updated
  kEval,      // running statistics
  kInstance,  // per-input statistics summed in sorted order (see below)
};

/// Train mode normalizes with the per-channel statistics of this input
/// (population variance, eps inside the square root) and, when
/// update_stats is set, folds them into the running averages. Eval mode
/// normalizes with the running statistics. Instance mode recomputes
/// per-input statistics but accumulates them over the sorted channel
/// values, so the result is bit-identical under any permutation of the
/// length axis; model inference uses it to stay consistent with the
/// per-sample training statistics.
inline Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                         BatchNormMode mode, BatchNormState& state,
                         bool update_stats = true) {
  require(input.rank() == 2, "batch_norm: input must be C x L");
  const std::size_t channels = input.extent(0), len = input.extent(1);
  require(len >= 1, "batch_norm: empty length axis");
  require(gamma.rank() == 1 && gamma.extent(0) == channels, "batch_norm: gamma size mismatch");
  require(beta.rank() == 1 && beta.extent(0) == channels, "batch_norm: beta size mismatch");
  if (mode == BatchNormMode::kEval) {
    require(state.initialized && state.running_mean.size() == channels,
            "batch_norm: eval mode needs initialized running stats");
  }

  const double* x = input.data().data();
  const double* g = gamma.data().data();
  const double* b = beta.data().data();

  std::vector<double> mean(channels), var(channels);
  if (mode == BatchNormMode::kTrain) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* xc = &x[c * len];
      double m = 0.0;
      for (std::size_t l = 0; l < len; ++l) m += xc[l];
      m /= static_cast<double>(len);
      double v = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double d = xc[l] - m;
        v += d * d;
      }
      v /= static_cast<double>(len);
      mean[c] = m;
      var[c] = v;
    }
    if (update_stats) {
      if (!state.initialized) state.reset(channels);
      for (std::size_t c = 0; c < channels; ++c) {
        state.running_mean[c] =
            (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
        state.running_var[c] =
            (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c];
      }
    }
  } else if (mode == BatchNormMode::kInstance) {
    std::vector<double> sorted(len);
    for (std::size_t c = 0; c < channels; ++c) {
      const double* xc = &x[c * len];
      sorted.assign(xc, xc + len);
      std::sort(sorted.begin(), sorted.end());
      double m = 0.0;
      for (double v : sorted) m += v;
      m /= static_cast<double>(len);
      double v = 0.0;
      for (double s : sorted) v += (s - m) * (s - m);
      v /= static_cast<double>(len);
      mean[c] = m;
      var[c] = v;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.eps);

  std::vector<double> out(channels * len);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = &x[c * len];
    double* oc = &out[c * len];
    const double a = g[c] * inv_std[c];
    const double shift = b[c] - a * mean[c];
    for (std::size_t l = 0; l < len; ++l) oc[l] = a * xc[l] + shift;
  }

  auto in_node = input.node();
  auto g_node = gamma.node();
  auto b_node = beta.node();
  const bool train = (mode == BatchNormMode::kTrain);
  auto bw = [in_node, g_node, b_node, channels, len, mean, inv_std, train](detail::Node& self) {
    const double* go = self.gbuf.data();
    const double* x = in_node->data.data();
    const double* g = g_node->data.data();
    const double inv_len = 1.0 / static_cast<double>(len);
    for (std::size_t c = 0; c < channels; ++c) {
      const double* goc = &go[c * len];
      const double* xc = &x[c * len];
      const double is = inv_std[c];
      const double mu = mean[c];
      double sum_go = 0.0, sum_go_xhat = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        sum_go += goc[l];
        sum_go_xhat += goc[l] * (xc[l] - mu) * is;
      }
      if (g_node->needs_grad) g_node->gbuf[c] += sum_go_xhat;
      if (b_node->needs_grad) b_node->gbuf[c] += sum_go;
      if (in_node->needs_grad) {
        double* gxc = &in_node->gbuf[c * len];
        const double gc = g[c];
        if (train) {
          // Full derivative through the batch statistics.
          for (std::size_t l = 0; l < len; ++l) {
            const double xhat = (xc[l] - mu) * is;
            gxc[l] += gc * is * (goc[l] - inv_len * sum_go - inv_len * xhat * sum_go_xhat);
          }
        } else {
          for (std::size_t l = 0; l < len; ++l) gxc[l] += gc * is * goc[l];
        }
      }
    }
  };
  return detail::make_op_node({channels, len}, std::move(out), {input, gamma, beta},
                              std::move(bw), "batch_norm");
}

// ---------------------------------------------------------------------------
// ReLU. Subgradient 0 at the kink.
// ---------------------------------------------------------------------------
inline Tensor relu(const Tensor& input) {
  std::vector<double> out(input.numel());
  const double* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;

  auto in_node = input.node();
  auto bw = [in_node](detail::Node& self) {
    if (!in_node->needs_grad) return;
    const double* go = self.gbuf.data();
    const double* x = in_node->data.data();
    double* gx = in_node->gbuf.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      if (x[i] > 0.0) gx[i] += go[i];
    }
  };
  return detail::make_op_node(input.shape(), std::move(out), {input}, std::move(bw), "relu");
}

// ---------------------------------------------------------------------------
// Global max pool over the length axis: C x L -> C. Ties go to the first
// maximum so replay is deterministic; backward is one-hot per channel.
// ---------------------------------------------------------------------------
inline Tensor max_pool_global(const Tensor& input) {
  require(input.rank() == 2, "max_pool_global: input must be C x L");
  const std::size_t channels = input.extent(0), len = input.extent(1);
  require(len >= 1, "max_pool_global: empty length axis");

  std::vector<double> out(channels);
  std::vector<std::size_t> argmax(channels);
  const double* x = input.data().data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = &x[c * len];
    std::size_t best = 0;
    for (std::size_t l = 1; l < len; ++l) {
      if (xc[l] > xc[best]) best = l;
    }
    out[c] = xc[best];
    argmax[c] = best;
  }

  auto in_node = input.node();
  auto bw = [in_node, argmax, len](detail::Node& self) {
    if (!in_node->needs_grad) return;
    const double* go = self.gbuf.data();
    double* gx = in_node->gbuf.data();
    for (std::size_t c = 0; c < self.data.size(); ++c) {
      gx[c * len + argmax[c]] += go[c];
    }
  };
  return detail::make_op_node({channels}, std::move(out), {input}, std::move(bw),
                              "max_pool_global");
}

// ---------------------------------------------------------------------------
// Fully connected: weight D_out x D_in, input D_in, bias D_out.
// ---------------------------------------------------------------------------
inline Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() == 1, "fully_connected: input must be a vector");
  require(weight.rank() == 2, "fully_connected: weight must be D_out x D_in");
  const std::size_t d_in = input.extent(0);
  const std::size_t d_out = weight.extent(0);
  require(weight.extent(1) == d_in, "fully_connected: weight D_in mismatch");
  require(bias.rank() == 1 && bias.extent(0) == d_out, "fully_connected: bias size mismatch");

  std::vector<double> out(d_out);
  const double* x = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  for (std::size_t o = 0; o < d_out; ++o) {
    const double* wrow = &w[o * d_in];
    double acc = b[o];
    for (std::size_t i = 0; i < d_in; ++i) acc += wrow[i] * x[i];
    out[o] = acc;
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.node();
  auto bw = [in_node, w_node, b_node, d_in, d_out](detail::Node& self) {
    const double* go = self.gbuf.data();
    const double* x = in_node->data.data();
    const double* w = w_node->data.data();
    if (in_node->needs_grad) {
      double* gx = in_node->gbuf.data();
      for (std::size_t o = 0; o < d_out; ++o) {
        const double g = go[o];
        const double* wrow = &w[o * d_in];
        for (std::size_t i = 0; i < d_in; ++i) gx[i] += g * wrow[i];
      }
    }
    if (w_node->needs_grad) {
      double* gw = w_node->gbuf.data();
      for (std::size_t o = 0; o < d_out; ++o) {
        const double g = go[o];
        double* gwrow = &gw[o * d_in];
        for (std::size_t i = 0; i < d_in; ++i) gwrow[i] += g * x[i];
      }
    }
    if (b_node->needs_grad) {
      double* gb = b_node->gbuf.data();
      for (std::size_t o = 0; o < d_out; ++o) gb[o] += go[o];
    }
  };
  return detail::make_op_node({d_out}, std::move(out), {input, weight, bias}, std::move(bw),
                              "fully_connected");
}

// ---------------------------------------------------------------------------
// Mean squared error over all elements (mean convention, so the magnitude is
// independent of the latent dimension).
// ---------------------------------------------------------------------------
inline Tensor mse(const Tensor& a, const Tensor& b) {
  require(same_shape(a.shape(), b.shape()), "mse: shape mismatch");
  const std::size_t n = a.numel();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pa[i] - pb[i];
    acc += d * d;
  }
  acc /= static_cast<double>(n);

  auto a_node = a.node();
  auto b_node = b.node();
  auto bw = [a_node, b_node, n](detail::Node& self) {
    const double go = self.gbuf[0];
    const double* pa = a_node->data.data();
    const double* pb = b_node->data.data();
    const double k = 2.0 * go / static_cast<double>(n);
    if (a_node->needs_grad) {
      double* ga = a_node->gbuf.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += k * (pa[i] - pb[i]);
    }
    if (b_node->needs_grad) {
      double* gb = b_node->gbuf.data();
      for (std::size_t i = 0; i < n; ++i) gb[i] -= k * (pa[i] - pb[i]);
    }
  };
  return detail::make_op_node({}, {acc}, {a, b}, std::move(bw), "mse");
}

/// Sum of all elements.
inline Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (double v : input.data()) acc += v;
  auto in_node = input.node();
  auto bw = [in_node](detail::Node& self) {
    if (!in_node->needs_grad) return;
    const double go = self.gbuf[0];
    for (double& g : in_node->gbuf) g += go;
  };
  return detail::make_op_node({}, {acc}, {input}, std::move(bw), "sum");
}

/// View with a new shape over the same element count.
inline Tensor reshape(const Tensor& input, Shape shape) {
  require(shape_numel(shape) == input.numel(), "reshape: element count mismatch");
  std::vector<double> out(input.data().begin(), input.data().end());
  auto in_node = input.node();
  auto bw = [in_node](detail::Node& self) {
    if (!in_node->needs_grad) return;
    double* gx = in_node->gbuf.data();
    const double* go = self.gbuf.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += go[i];
  };
  return detail::make_op_node(std::move(shape), std::move(out), {input}, std::move(bw),
                              "reshape");
}

/// Multiplication by a constant (minibatch loss averaging).
inline Tensor scale(const Tensor& input, double factor) {
  std::vector<double> out(input.numel());
  const double* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  auto in_node = input.node();
  auto bw = [in_node, factor](detail::Node& self) {
    if (!in_node->needs_grad) return;
    double* gx = in_node->gbuf.data();
    const double* go = self.gbuf.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += factor * go[i];
  };
  return detail::make_op_node(input.shape(), std::move(out), {input}, std::move(bw), "scale");
}

}  // namespace c2c
