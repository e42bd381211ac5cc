#pragma once

#include <cmath>
#include <vector>

#include "lesionbench/common.hpp"

namespace lesionbench::nn {

/// Adaptive-moment gradient descent; moments kept in double regardless of the
/// parameter scalar type.
template <class S>
class Adam {
 public:
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(size_t n, double lr_ = 1e-4) : lr(lr_), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<S>& theta, const std::vector<S>& grad) {
    if (theta.size() != m_.size() || grad.size() != m_.size())
      throw ContractError("Adam state size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i];
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g * g;
      theta[i] -= static_cast<S>(lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps));
    }
  }

 private:
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

}  // namespace lesionbench::nn
