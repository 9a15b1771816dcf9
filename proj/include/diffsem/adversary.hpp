#pragma once

#include "diffsem/nn/optim.hpp"
#include "diffsem/transmitter.hpp"

namespace diffsem {

/// Query corpus for the model-inversion attack: source images from the
/// adversary's split paired with features observed over its own channel path.
/// The transmitter is only ever exercised through its public pipeline.
struct AttackDataset {
  Tensor<float> images;    // [n, c, h, w]
  Tensor<float> features;  // [n, k] received z_hat_dot
  std::vector<int> labels;
  int t_prime = 0;
  double snr_db = 0.0;
};

template <class Models>
AttackDataset collect_pairs(Transmitter<Models>& tx, const Tensor<float>& images,
                            const std::vector<int>& labels, RngStream& rng,
                            int batch = 256) {
  if (!tx.trained())
    throw std::logic_error("collect_pairs: transmitter training is not complete");
  if (images.dim(0) == 0) throw std::invalid_argument("collect_pairs: empty split");
  AttackDataset ds;
  ds.t_prime = tx.config().t_prime;
  ds.snr_db = tx.config().channel.snr_db;
  ds.images = images;
  ds.labels = labels;
  const int n = images.dim(0);
  const std::int64_t img_stride = images.numel() / n;
  ds.features = Tensor<float>({n, Models::kFeat});
  for (int at = 0; at < n; at += batch) {
    const int bn = std::min(batch, n - at);
    std::vector<int> img_shape = images.shape;
    img_shape[0] = bn;
    Tensor<float> xb(img_shape);
    std::memcpy(xb.ptr(), images.ptr() + at * img_stride,
                sizeof(float) * static_cast<size_t>(bn * img_stride));
    auto res = tx.transmit_pipeline(xb, rng);
    Tensor<float> z_hat = tx.through_channel(res.z, rng);
    std::memcpy(ds.features.ptr() + static_cast<std::int64_t>(at) * Models::kFeat, z_hat.ptr(),
                sizeof(float) * static_cast<size_t>(bn) * Models::kFeat);
  }
  return ds;
}

/// Trains the inversion decoder on collected pairs with MSE loss. Aborts with
/// a diagnostic if the loss turns non-finite. Returns per-epoch train losses.
template <class Models>
std::vector<double> train_inversion(Models& m, const AttackDataset& ds, int epochs, double lr,
                                    RngStream& rng, int batch = 128) {
  if (ds.features.empty()) throw std::invalid_argument("train_inversion: empty dataset");
  nn::ParamList<float> ps;
  m.adversary.collect(ps, "adversary");
  nn::Adam<float> opt(ps, lr);
  nn::ReduceLROnPlateau plateau;
  const int n = ds.features.dim(0);
  const std::int64_t img_stride = ds.images.numel() / n;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::vector<double> losses;
  for (int ep = 0; ep < epochs; ++ep) {
    rng.shuffle(order);
    double ep_loss = 0.0;
    int steps = 0;
    for (int at = 0; at < n; at += batch) {
      const int bn = std::min(batch, n - at);
      Tensor<float> zb({bn, Models::kFeat});
      std::vector<int> img_shape = ds.images.shape;
      img_shape[0] = bn;
      Tensor<float> xb(img_shape);
      for (int i = 0; i < bn; ++i) {
        const int src = order[static_cast<size_t>(at + i)];
        std::memcpy(zb.ptr() + static_cast<std::int64_t>(i) * Models::kFeat,
                    ds.features.ptr() + static_cast<std::int64_t>(src) * Models::kFeat,
                    sizeof(float) * Models::kFeat);
        std::memcpy(xb.ptr() + i * img_stride, ds.images.ptr() + src * img_stride,
                    sizeof(float) * static_cast<size_t>(img_stride));
      }
      opt.zero_grad();
      Tensor<float> recon = m.adversary.forward(zb);
      Tensor<float> d;
      const double loss = nn::mse_loss(recon, xb, d);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_inversion: loss diverged (non-finite) at epoch " +
                                 std::to_string(ep));
      m.adversary.backward(d);
      opt.step();
      ep_loss += loss;
      ++steps;
    }
    ep_loss /= std::max(1, steps);
    losses.push_back(ep_loss);
    opt.set_lr(plateau.update(ep_loss, opt.lr()));
  }
  m.flags.adversary = true;
  m.flags.adversary_t_prime = ds.t_prime;
  m.flags.adversary_snr_db = ds.snr_db;
  return losses;
}

/// Runs the full query path and the trained decoder over a batch of images.
template <class Models>
Tensor<float> attack_batch(Models& m, Transmitter<Models>& tx, const Tensor<float>& images,
                           RngStream& rng, int batch = 256) {
  if (!m.flags.adversary) throw std::logic_error("attack_batch: adversary is not trained");
  const int n = images.dim(0);
  const std::int64_t img_stride = images.numel() / n;
  std::vector<int> out_shape = images.shape;
  Tensor<float> out(out_shape);
  for (int at = 0; at < n; at += batch) {
    const int bn = std::min(batch, n - at);
    std::vector<int> img_shape = images.shape;
    img_shape[0] = bn;
    Tensor<float> xb(img_shape);
    std::memcpy(xb.ptr(), images.ptr() + at * img_stride,
                sizeof(float) * static_cast<size_t>(bn * img_stride));
    auto res = tx.transmit_pipeline(xb, rng);
    Tensor<float> z_hat = tx.through_channel(res.z, rng);
    Tensor<float> recon = m.adversary.forward(z_hat);
    std::memcpy(out.ptr() + at * img_stride, recon.ptr(),
                sizeof(float) * static_cast<size_t>(bn * img_stride));
  }
  return out;
}

}  // namespace diffsem
