#pragma once

#include <cmath>
#include <stdexcept>

#include "diffsem/rng.hpp"
#include "diffsem/tensor.hpp"

namespace diffsem {

enum class ChannelKind { Awgn };

struct ChannelConfig {
  ChannelKind kind = ChannelKind::Awgn;
  double snr_db = 15.0;
  std::uint64_t seed = 0;

  double gamma_linear() const { return std::pow(10.0, snr_db / 10.0); }
};

/// Per-sample scaling so that sum_i g_i^2 / k = 1 holds exactly.
/// Input is [n, ...]; the trailing extents form one feature of length k.
template <typename S>
Tensor<S> power_normalize(const Tensor<S>& f) {
  if (f.ndim() < 2) throw std::invalid_argument("power_normalize: expected [n, ...]");
  const int n = f.dim(0);
  const std::int64_t k = f.numel() / n;
  Tensor<S> out(f.shape);
  for (int i = 0; i < n; ++i) {
    const double e = f.row_sum_sq(i);
    if (e == 0.0) throw std::invalid_argument("power_normalize: all-zero feature");
    const S scale = static_cast<S>(std::sqrt(static_cast<double>(k) / e));
    const S* src = f.ptr() + k * i;
    S* dst = out.ptr() + k * i;
    for (std::int64_t j = 0; j < k; ++j) dst[j] = src[j] * scale;
  }
  return out;
}

/// AWGN channel: z_hat = z + eps_ch with per-component variance
/// E||z||^2 / (gamma * D), where E||z||^2 is the measured mean energy over the
/// batch. Deterministic given the stream state.
template <typename S>
Tensor<S> transmit(const Tensor<S>& z, const ChannelConfig& cfg, RngStream& rng) {
  if (cfg.kind != ChannelKind::Awgn) throw std::invalid_argument("transmit: unsupported channel kind");
  if (z.ndim() < 2) throw std::invalid_argument("transmit: expected [n, ...]");
  const int n = z.dim(0);
  const std::int64_t d = z.numel() / n;
  double mean_energy = 0.0;
  for (int i = 0; i < n; ++i) mean_energy += z.row_sum_sq(i);
  mean_energy /= static_cast<double>(n);
  const double sigma = std::sqrt(mean_energy / (cfg.gamma_linear() * static_cast<double>(d)));
  Tensor<S> out(z.shape);
  for (std::int64_t i = 0; i < z.numel(); ++i)
    out[i] = z[i] + static_cast<S>(rng.normal() * sigma);
  return out;
}

}  // namespace diffsem
