#pragma once

#include <functional>

#include "diffsem/metrics.hpp"
#include "diffsem/nn/layers.hpp"
#include "diffsem/schedule.hpp"

namespace diffsem {

enum class ReceiverMode { kClassifierOnly, kDiffSem, kEDiffSem };

inline const char* mode_name(ReceiverMode m) {
  switch (m) {
    case ReceiverMode::kClassifierOnly: return "classifier_only";
    case ReceiverMode::kDiffSem: return "diffsem";
    case ReceiverMode::kEDiffSem: return "ediffsem";
  }
  return "?";
}

struct ReceiverOptions {
  int max_guidance_iters = 5;
  double stability_threshold = 0.01;  // fraction of changed labels
  int n_max = 50;                     // DDIM reverse-step budget
};

/// Noise estimator abstraction so tests can swap the trained U-Net for an
/// exact-epsilon oracle. ctx is null for the unguided path.
template <typename S>
using NoisePredictor =
    std::function<Tensor<S>(const Tensor<S>& f_t, int t, const Tensor<S>* ctx)>;

/// Runs the skip-step DDIM chain from t_prime down to 0.
template <typename S>
Tensor<S> ddim_denoise(const Tensor<S>& z_hat, int t_prime, const NoisePredictor<S>& predict,
                       const NoiseSchedule& s, const Tensor<S>* ctx, int n_max = 50) {
  const std::vector<int> path = ddim_timesteps(t_prime, n_max);
  if (path.empty()) return z_hat;
  Tensor<S> f = z_hat;
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    Tensor<S> eps = predict(f, path[i], ctx);
    f = ddim_step(f, eps, path[i], path[i + 1], s);
  }
  return f;
}

struct ReceiveResult {
  std::vector<int> labels;
  Tensor<float> probs;        // [n, 10]
  Tensor<float> f_hat;        // [n, k]
  int guidance_iters = 0;
};

/// DDIM-based denoising receiver around a trained model set.
template <class Models>
class Receiver {
 public:
  Receiver(Models& m, const NoiseSchedule& s, ReceiverOptions opts = {})
      : m_(m), sched_(s), opts_(opts) {}

  NoisePredictor<float> unguided_predictor() {
    return [this](const Tensor<float>& f_t, int t, const Tensor<float>*) {
      Tensor<float> tn({f_t.dim(0)}, static_cast<float>(t) / static_cast<float>(sched_.T));
      return m_.unet_unguided.forward(f_t, tn, {});
    };
  }

  NoisePredictor<float> guided_predictor() {
    return [this](const Tensor<float>& f_t, int t, const Tensor<float>* ctx) {
      if (!ctx) throw std::invalid_argument("guided predictor requires a context");
      Tensor<float> tn({f_t.dim(0)}, static_cast<float>(t) / static_cast<float>(sched_.T));
      return m_.unet_guided.forward(f_t, tn, *ctx);
    };
  }

  Tensor<float> classify_scores(const Tensor<float>& f_hat, const Tensor<float>& z_hat, int t) {
    Tensor<float> tn({f_hat.dim(0)}, static_cast<float>(t) / static_cast<float>(sched_.T));
    return m_.classifier.forward(f_hat, z_hat, tn);
  }

  /// Single-pass unguided denoising (identity at t_prime = 0).
  Tensor<float> denoise_diffsem(const Tensor<float>& z_hat, int t_prime) {
    auto pred = unguided_predictor();
    return ddim_denoise<float>(z_hat, t_prime, pred, sched_, nullptr, opts_.n_max);
  }

  /// Iterative label-guided denoising; the initial classification fills the
  /// f_hat slot with a copy of z_hat. Stops when the fraction of changed
  /// labels falls below the stability threshold or the iteration cap hits.
  ReceiveResult denoise_ediffsem(const Tensor<float>& z_hat, int t_prime) {
    ReceiveResult r;
    Tensor<float> scores = classify_scores(z_hat, z_hat, t_prime);
    r.probs = nn::softmax(scores);
    r.labels = nn::argmax_rows(scores);
    r.f_hat = z_hat;
    if (t_prime == 0) return r;
    auto pred = guided_predictor();
    for (int it = 0; it < opts_.max_guidance_iters; ++it) {
      r.f_hat = ddim_denoise<float>(z_hat, t_prime, pred, sched_, &r.probs, opts_.n_max);
      scores = classify_scores(r.f_hat, z_hat, t_prime);
      r.probs = nn::softmax(scores);
      std::vector<int> labels = nn::argmax_rows(scores);
      ++r.guidance_iters;
      std::int64_t changed = 0;
      for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != r.labels[i]) ++changed;
      r.labels = std::move(labels);
      if (static_cast<double>(changed) < opts_.stability_threshold *
                                             static_cast<double>(r.labels.size()))
        break;
    }
    return r;
  }

  ReceiveResult receive(const Tensor<float>& z_hat, int t_prime, ReceiverMode mode) {
    if (mode == ReceiverMode::kEDiffSem) return denoise_ediffsem(z_hat, t_prime);
    ReceiveResult r;
    r.f_hat = (mode == ReceiverMode::kDiffSem) ? denoise_diffsem(z_hat, t_prime) : z_hat;
    Tensor<float> scores = classify_scores(r.f_hat, z_hat, t_prime);
    r.probs = nn::softmax(scores);
    r.labels = nn::argmax_rows(scores);
    return r;
  }

  const ReceiverOptions& options() const { return opts_; }

 private:
  Models& m_;
  const NoiseSchedule& sched_;
  ReceiverOptions opts_;
};

/// Fraction of adversary reconstructions the strong classifier assigns the
/// true label (Definition-1 metric).
template <class StrongNet>
double semantic_fidelity(StrongNet& strong, bool strong_trained, const Tensor<float>& x_hats,
                         const std::vector<int>& truths) {
  if (!strong_trained)
    throw std::logic_error("semantic_fidelity: strong classifier is not trained");
  return accuracy(nn::argmax_rows(strong.forward(x_hats)), truths);
}

}  // namespace diffsem
