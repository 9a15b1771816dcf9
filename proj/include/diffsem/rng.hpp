#pragma once

#include <cstdint>
#include <random>

#include "diffsem/tensor.hpp"

namespace diffsem {

/// splitmix64 step; used to derive independent stream seeds from a base seed
/// and a tag so that results do not depend on evaluation order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random stream. All stochastic operations take one of these
/// explicitly; there is no hidden global state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Independent child stream; deterministic in (seed, tag).
  RngStream child(std::uint64_t tag) const { return RngStream(mix_seed(seed_, tag)); }

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }

  std::uint64_t next_u64() { return gen_(); }

  template <typename S>
  void fill_gaussian(Tensor<S>& t, double stddev = 1.0) {
    for (auto& v : t.data) v = static_cast<S>(normal_(gen_) * stddev);
  }

  template <typename S>
  void fill_uniform(Tensor<S>& t, double lo, double hi) {
    for (auto& v : t.data) v = static_cast<S>(lo + (hi - lo) * uniform_(gen_));
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace diffsem
