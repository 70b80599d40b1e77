// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "csi2cloud/tensor.hpp"

namespace c2c {

/// A named trainable tensor. Names are unique within a model and stable
/// across save/load.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
  }
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay: the decay is applied to the parameter
/// directly and never enters the moment estimates.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig config = {})
      : params_(std::move(params)), cfg_(config) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      require(params_[i] != nullptr && params_[i]->value.defined(),
              "adamw: null parameter");
      require(params_[i]->value.requires_grad(), "adamw: parameter without requires_grad");
      m_[i].assign(params_[i]->value.numel(), 0.0);
      v_[i].assign(params_[i]->value.numel(), 0.0);
    }
  }

  std::uint64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

  void zero_grad() {
    for (Parameter* p : params_) p->value.zero_grad();
  }

  /// One update over all parameters. Requires every gradient populated
  /// (allocated and finite).
  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& t = params_[i]->value;
      require(t.grad().size() == t.numel(), "adamw: missing gradient for " + params_[i]->name);
      ensure_finite(t.grad(), "adamw gradient");
      std::span<double> w = t.data();
      std::span<const double> g = t.grad();
      std::vector<double>& m = m_[i];
      std::vector<double>& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (cfg_.weight_decay != 0.0) w[j] -= cfg_.lr * cfg_.weight_decay * w[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
inline double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params) {
    for (double g : p->value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->value.grad_mut()) g *= k;
    }
  }
  return norm;
}

}  // namespace c2c
