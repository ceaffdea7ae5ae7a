#pragma once

// AdamW with decoupled weight decay over a fixed parameter list. Gradients
// are passed as one flat vector in the list's order so that the encoder can
// be stepped along a combined multi-task direction.

#include <cmath>
#include <vector>

#include "mtsgl/tensor.hpp"

namespace mtsgl {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.numel();
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
  }

  std::size_t size() const { return m_.size(); }
  long steps() const { return t_; }

  void step(const std::vector<double>& grad) {
    detail::require(grad.size() == m_.size(), "AdamW::step", "gradient has ", grad.size(),
                    " entries, parameters have ", m_.size());
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    std::size_t k = 0;
    for (auto& p : params_) {
      for (double& x : p.mutable_data()) {
        const double g = grad[k];
        m_[k] = cfg_.beta1 * m_[k] + (1 - cfg_.beta1) * g;
        v_[k] = cfg_.beta2 * v_[k] + (1 - cfg_.beta2) * g * g;
        x -= cfg_.lr * ((m_[k] / c1) / (std::sqrt(v_[k] / c2) + cfg_.eps) + cfg_.weight_decay * x);
        ++k;
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace mtsgl
