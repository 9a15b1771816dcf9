#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffsem/tensor.hpp"

namespace diffsem {

/// Linear noise schedule with precomputed cumulative products.
///
/// alphas[t-1] holds alpha_t for t in 1..T (the per-step noise rates, strictly
/// increasing). alpha_bars[t] = prod_{i<=t} (1 - alpha_i) with alpha_bars[0] = 1,
/// so t = 0 means "no distortion" and the forward-noising identity holds there.
struct NoiseSchedule {
  double alpha_1 = 0.0;
  double alpha_T = 0.0;
  int T = 0;
  std::vector<double> alphas;      // size T, index t-1
  std::vector<double> alpha_bars;  // size T+1, index t

  double alpha(int t) const {
    if (t < 1 || t > T) throw std::invalid_argument("NoiseSchedule::alpha: t out of [1,T]");
    return alphas[static_cast<size_t>(t - 1)];
  }
  double alpha_bar(int t) const {
    if (t < 0 || t > T) throw std::invalid_argument("NoiseSchedule::alpha_bar: t out of [0,T]");
    return alpha_bars[static_cast<size_t>(t)];
  }
};

inline NoiseSchedule build_schedule(double alpha_1, double alpha_T, int T) {
  if (!(alpha_1 > 0.0) || !(alpha_T < 1.0) || !(alpha_1 < alpha_T))
    throw std::invalid_argument("build_schedule: need 0 < alpha_1 < alpha_T < 1");
  if (T < 2) throw std::invalid_argument("build_schedule: need T >= 2");

  NoiseSchedule s;
  s.alpha_1 = alpha_1;
  s.alpha_T = alpha_T;
  s.T = T;
  s.alphas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T) + 1);
  s.alpha_bars[0] = 1.0;
  const double step = (alpha_T - alpha_1) / static_cast<double>(T - 1);
  for (int t = 1; t <= T; ++t) {
    const double a = alpha_1 + step * static_cast<double>(t - 1);
    s.alphas[static_cast<size_t>(t - 1)] = a;
    s.alpha_bars[static_cast<size_t>(t)] = s.alpha_bars[static_cast<size_t>(t - 1)] * (1.0 - a);
  }
  return s;
}

inline NoiseSchedule default_schedule() { return build_schedule(1e-4, 2e-2, 500); }

/// Equivalent SNR in dB of a feature self-noised to step t: the power ratio of
/// the retained signal component to the injected noise component.
inline double esnr_db(const NoiseSchedule& s, int t, double f0_energy, int D) {
  if (t < 1 || t > s.T) throw std::invalid_argument("esnr_db: t out of [1,T]");
  if (!(f0_energy > 0.0)) throw std::invalid_argument("esnr_db: f0_energy must be positive");
  if (D < 1) throw std::invalid_argument("esnr_db: D must be >= 1");
  const double ab = s.alpha_bar(t);
  return 10.0 * std::log10(ab * f0_energy / ((1.0 - ab) * static_cast<double>(D)));
}

/// f_t = sqrt(abar_t) * f0 + sqrt(1 - abar_t) * eps, elementwise.
template <typename S>
Tensor<S> forward_noise(const Tensor<S>& f0, int t, const Tensor<S>& eps,
                        const NoiseSchedule& s) {
  if (f0.numel() != eps.numel())
    throw std::invalid_argument("forward_noise: f0/eps length mismatch");
  const double ab = s.alpha_bar(t);
  const S cs = static_cast<S>(std::sqrt(ab));
  const S cn = static_cast<S>(std::sqrt(1.0 - ab));
  Tensor<S> out(f0.shape);
  for (std::int64_t i = 0; i < f0.numel(); ++i) out[i] = cs * f0[i] + cn * eps[i];
  return out;
}

/// One deterministic DDIM reverse step from f_t to f_{t_prev} given a noise
/// estimate for step t. t_prev may skip intermediate steps.
template <typename S>
Tensor<S> ddim_step(const Tensor<S>& f_t, const Tensor<S>& eps_pred, int t, int t_prev,
                    const NoiseSchedule& s) {
  if (t < 1 || t > s.T) throw std::invalid_argument("ddim_step: source t out of [1,T]");
  if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("ddim_step: need 0 <= t_prev < t");
  if (f_t.numel() != eps_pred.numel())
    throw std::invalid_argument("ddim_step: f_t/eps_pred length mismatch");
  const double ab_t = s.alpha_bar(t);
  const double ab_p = s.alpha_bar(t_prev);
  const double c0 = std::sqrt(ab_p) / std::sqrt(ab_t);
  const double ce = std::sqrt(1.0 - ab_p) - c0 * std::sqrt(1.0 - ab_t);
  Tensor<S> out(f_t.shape);
  for (std::int64_t i = 0; i < f_t.numel(); ++i)
    out[i] = static_cast<S>(c0 * static_cast<double>(f_t[i]) +
                            ce * static_cast<double>(eps_pred[i]));
  return out;
}

/// Reverse-step path for DDIM sub-sampled sampling: a strictly decreasing
/// sequence from t_prime to 0 with min(t_prime, n_max) transitions, evenly
/// spaced via rounded linear interpolation. Empty when t_prime = 0.
inline std::vector<int> ddim_timesteps(int t_prime, int n_max = 50) {
  if (t_prime < 0) throw std::invalid_argument("ddim_timesteps: t_prime must be >= 0");
  if (n_max < 1) throw std::invalid_argument("ddim_timesteps: n_max must be >= 1");
  if (t_prime == 0) return {};
  const int n = std::min(t_prime, n_max);
  std::vector<int> path;
  path.reserve(static_cast<size_t>(n) + 1);
  for (int j = 0; j <= n; ++j) {
    const int tj = static_cast<int>(std::lround(
        static_cast<double>(t_prime) * static_cast<double>(n - j) / static_cast<double>(n)));
    if (path.empty() || tj < path.back()) path.push_back(tj);
  }
  return path;
}

/// Channel-noise compensation result: transmit with noise index t_double_prime
/// so that the channel tops the received distribution up to the t_prime level.
struct CompensationResult {
  int t_prime = 0;
  int t_double_prime = 0;
  double alpha_bar_target = 1.0;
};

/// Solves the noise-margin equation for the reduced transmitter-side index.
///
/// gamma_linear is the ratio of total transmitted signal energy to the
/// per-component channel noise variance (for a simulated channel of true
/// linear SNR g over D components this is g * D; see Transmitter).
/// Returns the largest t'' <= t' whose alpha_bar still meets the target, or 0
/// when no index qualifies (channel noise alone already exceeds the budget).
inline CompensationResult solve_compensation(const NoiseSchedule& s, int t_prime,
                                             double gamma_linear, double f0_energy, int D) {
  if (t_prime < 0 || t_prime > s.T)
    throw std::invalid_argument("solve_compensation: t_prime out of [0,T]");
  if (!(gamma_linear > 0.0))
    throw std::invalid_argument("solve_compensation: gamma_linear must be positive");

  CompensationResult r;
  r.t_prime = t_prime;
  r.alpha_bar_target = (s.alpha_bar(t_prime) * (gamma_linear + f0_energy) + D) /
                       (gamma_linear + static_cast<double>(D));
  r.t_double_prime = 0;
  for (int t = t_prime; t >= 1; --t) {
    if (s.alpha_bar(t) >= r.alpha_bar_target) {
      r.t_double_prime = t;
      break;
    }
  }
  return r;
}

}  // namespace diffsem
