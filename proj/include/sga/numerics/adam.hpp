/*
   Copyright 2026 The SGA Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <cmath>

#include "sga/numerics/tensor.hpp"

namespace sga {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup = 500;
  double clip_norm = 1.0;  // <= 0 disables global-norm clipping
  /// When > warmup, lr decays linearly from the peak to lr * final_lr_ratio at this step.
  std::size_t decay_until = 0;
  double final_lr_ratio = 0.05;
};

/// Adam with linear warmup, optional linear decay and global gradient-norm clipping.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (Parameter* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
    active_.assign(params_.size(), true);
  }

  /// Excludes `p` from future updates (its gradient is still cleared by step()).
  void set_active(const Parameter* p, bool active) {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i] == p) active_[i] = active;
  }

  double current_lr() const {
    const double s = static_cast<double>(step_ + 1);
    const double w = static_cast<double>(cfg_.warmup);
    if (s < w) return cfg_.lr * s / w;
    if (cfg_.decay_until <= cfg_.warmup) return cfg_.lr;
    const double t = std::min(1.0, (s - w) / (static_cast<double>(cfg_.decay_until) - w));
    return cfg_.lr * (1.0 - t * (1.0 - cfg_.final_lr_ratio));
  }

  /// Applies one update using p->grad scaled by `grad_scale`, then zeroes the grads.
  void step(double grad_scale = 1.0) {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (active_[i])
        for (double g : params_[i]->grad.data()) norm2 += g * g * grad_scale * grad_scale;
    const double norm = std::sqrt(norm2);
    double scale = grad_scale;
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale *= cfg_.clip_norm / norm;

    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!active_[i]) {
        params_[i]->zero_grad();
        continue;
      }
      auto w = params_[i]->value.data();
      auto g = params_[i]->grad.data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] * scale;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      }
      params_[i]->zero_grad();
    }
  }

  std::size_t steps_taken() const noexcept { return step_; }
  const std::vector<Parameter*>& params() const noexcept { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::vector<bool> active_;
  std::size_t step_ = 0;
};

}  // namespace sga
