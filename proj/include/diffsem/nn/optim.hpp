#pragma once

#include <cmath>
#include <vector>

#include "diffsem/nn/layers.hpp"

namespace diffsem::nn {

template <typename S>
class Adam {
 public:
  explicit Adam(ParamList<S> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.emplace_back(p.value->shape);
      v_.emplace_back(p.value->shape);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void zero_grad() {
    for (auto& p : params_) p.grad->zero();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor<S>& w = *params_[pi].value;
      Tensor<S>& g = *params_[pi].grad;
      Tensor<S>& m = m_[pi];
      Tensor<S>& v = v_[pi];
      for (std::int64_t i = 0; i < w.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
        const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        w[i] -= static_cast<S>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
      }
    }
  }

 private:
  ParamList<S> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

/// Halves the learning rate when the validation loss stops improving; never
/// raises it and never drops below the floor.
class ReduceLROnPlateau {
 public:
  ReduceLROnPlateau(double factor = 0.5, int patience = 3, double floor = 1e-4)
      : factor_(factor), patience_(patience), floor_(floor) {}

  /// Feeds one validation loss; returns the (possibly reduced) new rate.
  double update(double val_loss, double current_lr) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_ = 0;
      return current_lr;
    }
    if (++bad_ > patience_) {
      bad_ = 0;
      return std::max(floor_, current_lr * factor_);
    }
    return current_lr;
  }

 private:
  double factor_;
  int patience_;
  double floor_;
  double best_ = 1e300;
  int bad_ = 0;
};

}  // namespace diffsem::nn
