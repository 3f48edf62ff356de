#pragma once

#include <cmath>
#include <vector>

#include "nowcast/nn/layers.hpp"

namespace nowcast::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParameterStore& store, AdamConfig cfg) : cfg_(cfg) {
    detail::require_config(cfg.lr >= 0.0, "learning rate must be non-negative");
    for (const auto& p : store.params()) {
      m_.emplace_back(p.var->value.size(), 0.0f);
      v_.emplace_back(p.var->value.size(), 0.0f);
    }
  }

  /// One update from the gradients currently held by the parameters (missing gradients count as 0).
  void step(const ParameterStore& store) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto& params = store.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& value = params[k].var->value;
      const auto& grad = params[k].var->grad;
      if (grad.empty()) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g);
        v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        value[i] = static_cast<float>(value[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

/// Adds d(beta * sum theta^2)/d theta = 2 beta theta to the gradients of decayed parameters.
inline void add_l2_gradient(const ParameterStore& store, double beta) {
  if (beta == 0.0) return;
  for (const auto& p : store.params()) {
    if (!p.decay) continue;
    auto& g = p.var->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<float>(2.0 * beta * p.var->value[i]);
  }
}

/// Global gradient norm, rescaling all gradients down to `max_norm` when it is exceeded.
inline double clip_grad_norm(const ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.params()) sq += p.var->grad.sum_squares();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (const auto& p : store.params()) {
      for (auto& g : p.var->grad.data) g *= s;
    }
  }
  return norm;
}

}  // namespace nowcast::nn
