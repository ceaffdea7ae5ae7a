#pragma once

// Central finite differences against the tape for scalar functions of a set
// of leaf tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mtsgl/rng.hpp"
#include "mtsgl/tensor.hpp"

namespace mtsgl::testing {

struct GradCheck {
  double max_rel = 0;
  std::size_t checked = 0;
};

/// Relative error with a 1e-5 floor on the magnitude, so entries whose true
/// gradient is zero are compared absolutely.
inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

inline GradCheck check_gradients(std::vector<Tensor> leaves,
                                 const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 double eps = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    const Tensor loss = f(leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
  }
  GradCheck out;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto data = leaves[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x0 = data[i];
      data[i] = x0 + eps;
      const double fp = f(leaves).item();
      data[i] = x0 - eps;
      const double fm = f(leaves).item();
      data[i] = x0;
      const double numeric = (fp - fm) / (2 * eps);
      out.max_rel = std::max(out.max_rel, rel_error(analytic[k][i], numeric));
      ++out.checked;
    }
  }
  return out;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1,
                            bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Values bounded away from zero so ReLU kinks stay outside the difference
/// stencil.
inline Tensor random_nonzero(Rng& rng, Shape shape, double margin = 0.05) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    const double m = rng.uniform(margin, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace mtsgl::testing
