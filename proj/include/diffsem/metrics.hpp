#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffsem/tensor.hpp"

namespace diffsem {

/// One sweep cell. Optional values (adversary columns when no attack weights
/// exist for the cell) are encoded as NaN and serialized as empty fields.
struct MetricsRecord {
  int t = 0;
  double snr_db = 0.0;
  std::string mode;
  double receiver_accuracy = std::nan("");
  double adversary_fidelity = std::nan("");
  double mean_ssim = std::nan("");
  double mean_psnr_db = std::nan("");
  double esnr_db = std::nan("");
};

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths) {
  if (predictions.empty() || predictions.size() != truths.size())
    throw std::invalid_argument("accuracy: empty or mismatched inputs");
  std::int64_t hit = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == truths[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

constexpr double kPsnrCeilingDb = 150.0;

template <typename S>
double mse(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape) throw std::invalid_argument("mse: shape mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

/// 10*log10(R^2 / MSE), capped at kPsnrCeilingDb when the images coincide.
template <typename S>
double psnr(const Tensor<S>& x, const Tensor<S>& x_hat, double r = 1.0) {
  if (!(r > 0.0)) throw std::invalid_argument("psnr: R must be positive");
  const double m = mse(x, x_hat);
  if (m == 0.0) return kPsnrCeilingDb;
  return 10.0 * std::log10(r * r / m);
}

/// Global-statistics SSIM with c1 = (0.01 R)^2, c2 = (0.03 R)^2.
template <typename S>
double ssim(const Tensor<S>& x, const Tensor<S>& x_hat, double r = 1.0) {
  if (x.shape != x_hat.shape) throw std::invalid_argument("ssim: shape mismatch");
  const std::int64_t n = x.numel();
  if (n == 0) throw std::invalid_argument("ssim: empty input");
  double mx = 0.0, my = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    mx += static_cast<double>(x[i]);
    my += static_cast<double>(x_hat[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(x[i]) - mx;
    const double dy = static_cast<double>(x_hat[i]) - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= static_cast<double>(n);
  vy /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  const double c1 = (0.01 * r) * (0.01 * r);
  const double c2 = (0.03 * r) * (0.03 * r);
  return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
         ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace diffsem
