#pragma once

#include <map>

#include "diffsem/channel.hpp"
#include "diffsem/schedule.hpp"

namespace diffsem {

struct TransmitterConfig {
  int t_prime = 0;
  ChannelConfig channel;
  bool compensation_enabled = true;
};

/// Compensation index for a simulated channel of true SNR snr_db over D
/// components. The closed form takes the ratio of total signal energy to
/// per-component noise variance, which for that channel is gamma * D; feature
/// energy is D exactly under power normalization.
inline int compensation_index(const NoiseSchedule& s, int t_prime, double snr_db, int d) {
  const double gamma = std::pow(10.0, snr_db / 10.0) * static_cast<double>(d);
  return solve_compensation(s, t_prime, gamma, static_cast<double>(d), d).t_double_prime;
}

/// Deployable transmitter: encode, power-normalize, then self-noise with the
/// channel-aware margin. The signal coefficient always uses t', the noise
/// coefficient uses the compensated t''.
template <class Models>
class Transmitter {
 public:
  Transmitter(Models& m, const NoiseSchedule& s, TransmitterConfig cfg)
      : m_(m), sched_(s), cfg_(cfg) {}

  const TransmitterConfig& config() const { return cfg_; }
  void set_t_prime(int t) {
    cfg_.t_prime = t;
  }

  /// True once the encoder/classifier pair has finished training.
  bool trained() const { return m_.flags.encoder && m_.flags.classifier; }

  int t_double_prime() const {
    if (!cfg_.compensation_enabled) return cfg_.t_prime;
    const auto key = std::make_pair(cfg_.t_prime, cfg_.channel.snr_db);
    auto it = comp_cache_.find(key);
    if (it != comp_cache_.end()) return it->second;
    const int t2 = compensation_index(sched_, cfg_.t_prime, cfg_.channel.snr_db, Models::kFeat);
    comp_cache_.emplace(key, t2);
    return t2;
  }

  Tensor<float> encode_normalized(const Tensor<float>& x) {
    return power_normalize(m_.encoder.forward(x));
  }

  struct Result {
    Tensor<float> z;
    int t_double_prime = 0;
  };

  /// Self-noising of an already-normalized feature block.
  Result self_noise(const Tensor<float>& f0, RngStream& rng) const {
    const int tp = cfg_.t_prime;
    const int t2 = t_double_prime();
    const float cs = static_cast<float>(std::sqrt(sched_.alpha_bar(tp)));
    const float cn = static_cast<float>(std::sqrt(1.0 - sched_.alpha_bar(t2)));
    Result r;
    r.t_double_prime = t2;
    r.z = Tensor<float>(f0.shape);
    for (std::int64_t i = 0; i < f0.numel(); ++i)
      r.z[i] = cs * f0[i] + cn * static_cast<float>(rng.normal());
    return r;
  }

  Result transmit_pipeline(const Tensor<float>& x, RngStream& rng) {
    return self_noise(encode_normalized(x), rng);
  }

  /// Channel leg, separated so transmitter output can also be inspected.
  Tensor<float> through_channel(const Tensor<float>& z, RngStream& rng) const {
    return transmit(z, cfg_.channel, rng);
  }

 private:
  Models& m_;
  const NoiseSchedule& sched_;
  TransmitterConfig cfg_;
  mutable std::map<std::pair<int, double>, int> comp_cache_;
};

}  // namespace diffsem
