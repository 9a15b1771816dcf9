#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include "diffsem/adversary.hpp"
#include "diffsem/bundle.hpp"
#include "diffsem/dataset.hpp"
#include "diffsem/receiver.hpp"

namespace diffsem {

struct TrainConfig {
  std::string dataset = "mnist";
  std::string data_dir = "data/mnist";
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  int batch = 128;
  double lr_init = 1e-3;
  double lr_floor = 1e-4;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  double snr_db = 15.0;
  double alpha_1 = 1e-4;
  double alpha_T = 2e-2;
  int steps_T = 500;
  int epochs_stage1 = 20;
  int epochs_stage2 = 20;
  int epochs_stage3 = 20;
  int epochs_finetune = 10;
  int adversary_t_prime = 300;
  bool compensation = true;
  double context_dropout = 0.1;
  double val_fraction = 0.1;
  // Receiver fine-tuning runs the diffusion chain on this many batches per
  // T'-grid point per epoch; the bypass-classification loss sees every batch.
  int finetune_chain_batches = 2;
};

/// Runs Algorithm-1 style staged preparation plus receiver fine-tuning for
/// one dataset. Stages write checkpoints and a training-curve CSV.
template <class Models>
class Trainer {
 public:
  Trainer(TrainConfig cfg, DataSplits splits)
      : cfg_(std::move(cfg)),
        splits_(std::move(splits)),
        sched_(build_schedule(cfg_.alpha_1, cfg_.alpha_T, cfg_.steps_T)),
        models_(std::make_unique<Models>()) {
    std::filesystem::create_directories(cfg_.out_dir);
    RngStream init_rng(mix_seed(cfg_.seed, 0x1011));
    models_->init_all(init_rng);
    // Hold out a validation slice of the T-R portion for the plateau signal.
    const int n = splits_.train_tr.n();
    const int n_val = std::max(1, static_cast<int>(n * cfg_.val_fraction));
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    RngStream vr(mix_seed(cfg_.seed, 0x7a1));
    vr.shuffle(idx);
    std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<int> tr_idx(idx.begin() + n_val, idx.end());
    train_ = take_rows(splits_.train_tr, tr_idx);
    val_ = take_rows(splits_.train_tr, val_idx);
  }

  Models& models() { return *models_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const TrainConfig& config() const { return cfg_; }
  const DataSplits& splits() const { return splits_; }

  void load_checkpoint(const std::string& path) { sched_ = load_bundle(*models_, path); }
  void save_checkpoint(const std::string& name) {
    save_bundle(*models_, sched_, cfg_.out_dir + "/" + name);
  }

  // -------------------------------------------------------------------
  // Stage 1: joint encoder + classifier through the channel at t = 0.
  // -------------------------------------------------------------------
  void stage1_train_tr() {
    nn::ParamList<float> ps;
    models_->encoder.collect(ps, "encoder");
    models_->classifier.collect(ps, "classifier");
    nn::Adam<float> opt(ps, cfg_.lr_init);
    nn::ReduceLROnPlateau plateau(cfg_.plateau_factor, cfg_.plateau_patience, cfg_.lr_floor);
    RngStream rng(mix_seed(cfg_.seed, 0xA5E1));
    ChannelConfig ch{ChannelKind::Awgn, cfg_.snr_db, rng.next_u64()};
    nn::PowerNorm<float> pnorm;

    std::vector<int> order = index_range(train_.n());
    for (int ep = 0; ep < cfg_.epochs_stage1; ++ep) {
      rng.shuffle(order);
      double ep_loss = 0.0;
      int steps = 0;
      for (int at = 0; at < train_.n(); at += cfg_.batch) {
        Tensor<float> xb;
        std::vector<int> yb;
        gather_batch(train_, order, at, cfg_.batch, xb, yb);
        opt.zero_grad();
        Tensor<float> g = pnorm.forward(models_->encoder.forward(xb));
        Tensor<float> z_hat = transmit(g, ch, rng);
        Tensor<float> t0({xb.dim(0)}, 0.0f);
        Tensor<float> scores = models_->classifier.forward(z_hat, z_hat, t0);
        Tensor<float> dscores;
        const double loss = nn::softmax_ce(scores, yb, dscores);
        check_finite(loss, "stage1");
        Tensor<float> df, dz;
        models_->classifier.backward(dscores, df, dz);
        for (std::int64_t i = 0; i < dz.numel(); ++i) dz[i] += df[i];
        models_->encoder.backward(pnorm.backward(dz));
        opt.step();
        ep_loss += loss;
        ++steps;
      }
      const double val = stage1_val_loss(ch);
      curve_row(ep, "stage1", ep_loss / steps, val, opt.lr());
      opt.set_lr(plateau.update(val, opt.lr()));
    }
    models_->flags.encoder = true;
    models_->flags.classifier = true;
    save_checkpoint("bundle_stage1.dsb");
  }

  // -------------------------------------------------------------------
  // Stage 2: noise-prediction U-Net over frozen-encoder features.
  // -------------------------------------------------------------------
  void stage2_train_unet(bool guided) {
    if (!models_->flags.encoder)
      throw std::logic_error("stage2_train_unet: stage 1 has not completed");
    UNet<float>& net = guided ? models_->unet_guided : models_->unet_unguided;
    nn::ParamList<float> ps;
    net.collect(ps, "unet");
    nn::Adam<float> opt(ps, cfg_.lr_init);
    nn::ReduceLROnPlateau plateau(cfg_.plateau_factor, cfg_.plateau_patience, cfg_.lr_floor);
    RngStream rng(mix_seed(cfg_.seed, guided ? 0xB221 : 0xB222));

    Tensor<float> feats = encode_all(train_);
    Tensor<float> val_feats = encode_all(val_);
    std::vector<int> order = index_range(train_.n());
    const int k = Models::kFeat;

    for (int ep = 0; ep < cfg_.epochs_stage2; ++ep) {
      rng.shuffle(order);
      double ep_loss = 0.0;
      int steps = 0;
      for (int at = 0; at < train_.n(); at += cfg_.batch) {
        const int bn = std::min(cfg_.batch, train_.n() - at);
        Tensor<float> f_t({bn, k}), eps({bn, k}), tn({bn});
        Tensor<float> ctx;
        if (guided) ctx = Tensor<float>({bn, 10}, 0.0f);
        for (int i = 0; i < bn; ++i) {
          const int src = order[static_cast<size_t>(at + i)];
          const int t = rng.uniform_int(1, sched_.T);
          tn[i] = static_cast<float>(t) / static_cast<float>(sched_.T);
          const float cs = static_cast<float>(std::sqrt(sched_.alpha_bar(t)));
          const float cn = static_cast<float>(std::sqrt(1.0 - sched_.alpha_bar(t)));
          for (int j = 0; j < k; ++j) {
            const float e = static_cast<float>(rng.normal());
            eps[static_cast<std::int64_t>(i) * k + j] = e;
            f_t[static_cast<std::int64_t>(i) * k + j] =
                cs * feats[static_cast<std::int64_t>(src) * k + j] + cn * e;
          }
          if (guided && rng.uniform() >= cfg_.context_dropout)
            ctx[static_cast<std::int64_t>(i) * 10 + train_.labels[static_cast<size_t>(src)]] = 1.0f;
        }
        opt.zero_grad();
        Tensor<float> pred = net.forward(f_t, tn, ctx);
        Tensor<float> d;
        const double loss = nn::mse_loss(pred, eps, d);
        check_finite(loss, "stage2");
        net.backward(d);
        opt.step();
        ep_loss += loss;
        ++steps;
      }
      const double val = stage2_val_loss(net, guided, val_feats);
      curve_row(ep, guided ? "stage2_guided" : "stage2_unguided", ep_loss / steps, val, opt.lr());
      opt.set_lr(plateau.update(val, opt.lr()));
    }
    (guided ? models_->flags.unet_guided : models_->flags.unet_unguided) = true;
    save_checkpoint(guided ? "bundle_stage2g.dsb" : "bundle_stage2u.dsb");
  }

  // -------------------------------------------------------------------
  // Stage 3: inversion adversary on collected pairs, then the strong
  // classifier on the combined clean / reconstructed / distorted corpus.
  // -------------------------------------------------------------------
  void stage3_train_adversary_strong() {
    if (!models_->flags.encoder || !models_->flags.classifier)
      throw std::logic_error("stage3: transmitter-receiver training has not completed");
    if (!models_->flags.unet_guided && !models_->flags.unet_unguided)
      throw std::logic_error("stage3: diffusion module has not been trained");
    RngStream rng(mix_seed(cfg_.seed, 0xC3));
    TransmitterConfig tc;
    tc.t_prime = cfg_.adversary_t_prime;
    tc.channel = ChannelConfig{ChannelKind::Awgn, cfg_.snr_db, rng.next_u64()};
    tc.compensation_enabled = cfg_.compensation;
    Transmitter<Models> tx(*models_, sched_, tc);
    RngStream adv_rng = rng.child(1);
    AttackDataset ds =
        collect_pairs(tx, splits_.train_adv.images, splits_.train_adv.labels, adv_rng);
    RngStream train_rng = rng.child(2);
    auto losses = train_inversion(*models_, ds, cfg_.epochs_stage3, cfg_.lr_init, train_rng);
    for (size_t i = 0; i < losses.size(); ++i)
      curve_row(static_cast<int>(i), "stage3_adversary", losses[i], losses[i], 0.0);
    train_strong_classifier(ds, rng.child(3));
    save_checkpoint("bundle_stage3.dsb");
  }

  // -------------------------------------------------------------------
  // Receiver fine-tuning: only the classifier parameters move. The T' grid
  // {0, 50, ..., T} is cycled across batches; a capped number of batches per
  // grid point also runs the denoising chain of the configured mode.
  // -------------------------------------------------------------------
  void finetune_receiver(ReceiverMode mode) {
    if (!models_->flags.encoder || !models_->flags.unet_unguided ||
        (mode == ReceiverMode::kEDiffSem && !models_->flags.unet_guided))
      throw std::logic_error("finetune_receiver: required stages have not completed");
    nn::ParamList<float> ps;
    models_->classifier.collect(ps, "classifier");
    nn::Adam<float> opt(ps, cfg_.lr_init);
    nn::ReduceLROnPlateau plateau(cfg_.plateau_factor, cfg_.plateau_patience, cfg_.lr_floor);
    RngStream rng(mix_seed(cfg_.seed, 0xF17E));
    Receiver<Models> rx(*models_, sched_);

    std::vector<int> grid;
    for (int t = 0; t <= sched_.T; t += 50) grid.push_back(t);
    std::vector<int> order = index_range(train_.n());

    for (int ep = 0; ep < cfg_.epochs_finetune; ++ep) {
      rng.shuffle(order);
      double ep_loss = 0.0;
      int steps = 0;
      std::vector<int> chain_used(grid.size(), 0);
      int bi = 0;
      for (int at = 0; at < train_.n(); at += cfg_.batch, ++bi) {
        const size_t gi = static_cast<size_t>(bi) % grid.size();
        const int t_prime = grid[gi];
        Tensor<float> xb;
        std::vector<int> yb;
        gather_batch(train_, order, at, cfg_.batch, xb, yb);

        TransmitterConfig tc;
        tc.t_prime = t_prime;
        tc.channel = ChannelConfig{ChannelKind::Awgn, cfg_.snr_db, 0};
        tc.compensation_enabled = cfg_.compensation;
        Transmitter<Models> tx(*models_, sched_, tc);
        auto res = tx.transmit_pipeline(xb, rng);
        Tensor<float> z_hat = tx.through_channel(res.z, rng);

        opt.zero_grad();
        double loss = classifier_ce_step(z_hat, z_hat, t_prime, yb);
        const bool run_chain = mode != ReceiverMode::kClassifierOnly && t_prime > 0 &&
                               chain_used[gi] < cfg_.finetune_chain_batches;
        if (run_chain) {
          ++chain_used[gi];
          Tensor<float> f_hat;
          if (mode == ReceiverMode::kDiffSem) {
            f_hat = rx.denoise_diffsem(z_hat, t_prime);
          } else {
            f_hat = ediffsem_training_chain(rx, z_hat, t_prime, yb);
          }
          loss += classifier_ce_step(f_hat, z_hat, t_prime, yb);
        }
        check_finite(loss, "finetune");
        opt.step();
        ep_loss += loss;
        ++steps;
      }
      const double val = finetune_val_loss(rng);
      curve_row(ep, "finetune", ep_loss / steps, val, opt.lr());
      opt.set_lr(plateau.update(val, opt.lr()));
    }
    models_->flags.finetuned = true;
    save_checkpoint("bundle.dsb");
  }

 private:
  static std::vector<int> index_range(int n) {
    std::vector<int> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
    return v;
  }

  static void check_finite(double loss, const char* stage) {
    if (!std::isfinite(loss))
      throw std::runtime_error(std::string(stage) + ": loss diverged (non-finite)");
  }

  void gather_batch(const Dataset& ds, const std::vector<int>& order, int at, int batch,
                    Tensor<float>& xb, std::vector<int>& yb) const {
    const int bn = std::min(batch, ds.n() - at);
    std::vector<int> shape = ds.images.shape;
    shape[0] = bn;
    xb = Tensor<float>(shape);
    yb.resize(static_cast<size_t>(bn));
    const std::int64_t stride = ds.images.numel() / ds.n();
    for (int i = 0; i < bn; ++i) {
      const int src = order[static_cast<size_t>(at + i)];
      std::memcpy(xb.ptr() + i * stride, ds.images.ptr() + src * stride,
                  sizeof(float) * static_cast<size_t>(stride));
      yb[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(src)];
    }
  }

  Tensor<float> encode_all(const Dataset& ds, int batch = 512) {
    Tensor<float> out({ds.n(), Models::kFeat});
    std::vector<int> order = index_range(ds.n());
    for (int at = 0; at < ds.n(); at += batch) {
      Tensor<float> xb;
      std::vector<int> yb;
      gather_batch(ds, order, at, batch, xb, yb);
      Tensor<float> f = power_normalize(models_->encoder.forward(xb));
      std::memcpy(out.ptr() + static_cast<std::int64_t>(at) * Models::kFeat, f.ptr(),
                  sizeof(float) * static_cast<size_t>(f.numel()));
    }
    return out;
  }

  double stage1_val_loss(const ChannelConfig& ch) {
    RngStream vrng(mix_seed(cfg_.seed, 0xE0E1));
    std::vector<int> order = index_range(val_.n());
    double total = 0.0;
    int steps = 0;
    for (int at = 0; at < val_.n(); at += cfg_.batch) {
      Tensor<float> xb;
      std::vector<int> yb;
      gather_batch(val_, order, at, cfg_.batch, xb, yb);
      nn::PowerNorm<float> pn;
      Tensor<float> z_hat = transmit(pn.forward(models_->encoder.forward(xb)), ch, vrng);
      Tensor<float> t0({xb.dim(0)}, 0.0f);
      Tensor<float> scores = models_->classifier.forward(z_hat, z_hat, t0);
      Tensor<float> d;
      total += nn::softmax_ce(scores, yb, d);
      ++steps;
    }
    return total / std::max(1, steps);
  }

  double stage2_val_loss(UNet<float>& net, bool guided, const Tensor<float>& val_feats) {
    RngStream vrng(mix_seed(cfg_.seed, 0xE0E2));  // fixed noise draw per eval
    const int k = Models::kFeat;
    const int n = val_feats.dim(0);
    double total = 0.0;
    int steps = 0;
    for (int at = 0; at < n; at += cfg_.batch) {
      const int bn = std::min(cfg_.batch, n - at);
      Tensor<float> f_t({bn, k}), eps({bn, k}), tn({bn});
      Tensor<float> ctx;
      if (guided) ctx = Tensor<float>({bn, 10}, 0.0f);
      for (int i = 0; i < bn; ++i) {
        const int t = vrng.uniform_int(1, sched_.T);
        tn[i] = static_cast<float>(t) / static_cast<float>(sched_.T);
        const float cs = static_cast<float>(std::sqrt(sched_.alpha_bar(t)));
        const float cn = static_cast<float>(std::sqrt(1.0 - sched_.alpha_bar(t)));
        for (int j = 0; j < k; ++j) {
          const float e = static_cast<float>(vrng.normal());
          eps[static_cast<std::int64_t>(i) * k + j] = e;
          f_t[static_cast<std::int64_t>(i) * k + j] =
              cs * val_feats[static_cast<std::int64_t>(at + i) * k + j] + cn * e;
        }
        if (guided)
          ctx[static_cast<std::int64_t>(i) * 10 + val_.labels[static_cast<size_t>(at + i)]] = 1.0f;
      }
      Tensor<float> pred = net.forward(f_t, tn, ctx);
      Tensor<float> d;
      total += nn::mse_loss(pred, eps, d);
      ++steps;
    }
    return total / std::max(1, steps);
  }

  double classifier_ce_step(const Tensor<float>& f_hat, const Tensor<float>& z_hat, int t_prime,
                            const std::vector<int>& yb) {
    Tensor<float> tn({f_hat.dim(0)},
                     static_cast<float>(t_prime) / static_cast<float>(sched_.T));
    Tensor<float> scores = models_->classifier.forward(f_hat, z_hat, tn);
    Tensor<float> d, du1, du2;
    const double loss = nn::softmax_ce(scores, yb, d);
    models_->classifier.backward(d, du1, du2);
    return loss;
  }

  /// Training-time guidance loop: labels are available, so iterate while the
  /// batch accuracy of the self-referential estimate keeps increasing.
  Tensor<float> ediffsem_training_chain(Receiver<Models>& rx, const Tensor<float>& z_hat,
                                        int t_prime, const std::vector<int>& yb) {
    Tensor<float> scores = rx.classify_scores(z_hat, z_hat, t_prime);
    Tensor<float> probs = nn::softmax(scores);
    double best = accuracy(nn::argmax_rows(scores), yb);
    Tensor<float> f_hat = z_hat;
    auto pred = rx.guided_predictor();
    for (int it = 0; it < rx.options().max_guidance_iters; ++it) {
      Tensor<float> cand = ddim_denoise<float>(z_hat, t_prime, pred, sched_, &probs,
                                               rx.options().n_max);
      Tensor<float> s2 = rx.classify_scores(cand, z_hat, t_prime);
      const double acc = accuracy(nn::argmax_rows(s2), yb);
      f_hat = cand;
      probs = nn::softmax(s2);
      if (acc <= best) break;
      best = acc;
    }
    return f_hat;
  }

  double finetune_val_loss(RngStream& rng) {
    std::vector<int> order = index_range(val_.n());
    RngStream vrng(mix_seed(cfg_.seed, 0xE0E3));
    double total = 0.0;
    int steps = 0;
    int bi = 0;
    for (int at = 0; at < val_.n(); at += cfg_.batch, ++bi) {
      const int t_prime = (bi % 11) * 50;
      Tensor<float> xb;
      std::vector<int> yb;
      gather_batch(val_, order, at, cfg_.batch, xb, yb);
      TransmitterConfig tc;
      tc.t_prime = t_prime;
      tc.channel = ChannelConfig{ChannelKind::Awgn, cfg_.snr_db, 0};
      tc.compensation_enabled = cfg_.compensation;
      Transmitter<Models> tx(*models_, sched_, tc);
      auto res = tx.transmit_pipeline(xb, vrng);
      Tensor<float> z_hat = tx.through_channel(res.z, vrng);
      Tensor<float> tn({xb.dim(0)}, static_cast<float>(t_prime) / static_cast<float>(sched_.T));
      Tensor<float> scores = models_->classifier.forward(z_hat, z_hat, tn);
      Tensor<float> d;
      total += nn::softmax_ce(scores, yb, d);
      ++steps;
    }
    (void)rng;
    return total / std::max(1, steps);
  }

  void train_strong_classifier(const AttackDataset& attack_ds, RngStream rng) {
    // Corpus: clean images from both splits, adversary reconstructions, and
    // directly distorted copies of the T-R images. Assembled per batch from
    // (kind, index) descriptors to keep memory flat.
    struct Item {
      int kind;  // 0 clean-tr, 1 clean-adv, 2 reconstruction, 3 direct-distorted
      int index;
    };
    std::vector<Item> corpus;
    for (int i = 0; i < splits_.train_tr.n(); ++i) corpus.push_back({0, i});
    for (int i = 0; i < splits_.train_adv.n(); ++i) corpus.push_back({1, i});
    for (int i = 0; i < attack_ds.features.dim(0); ++i) corpus.push_back({2, i});
    for (int i = 0; i < splits_.train_tr.n(); ++i) corpus.push_back({3, i});

    // Per-index distortion step for the direct-noised copies, fixed across
    // epochs so the corpus is deterministic.
    std::vector<int> direct_t(static_cast<size_t>(splits_.train_tr.n()));
    RngStream trng = rng.child(11);
    for (auto& t : direct_t) t = trng.uniform_int(0, sched_.T);

    const int n_val = std::max(1, static_cast<int>(corpus.size() * cfg_.val_fraction));
    RngStream srng = rng.child(12);
    srng.shuffle(corpus);
    std::vector<Item> val_items(corpus.begin(), corpus.begin() + n_val);
    std::vector<Item> train_items(corpus.begin() + n_val, corpus.end());

    nn::ParamList<float> ps;
    models_->strong.collect(ps, "strong");
    nn::Adam<float> opt(ps, cfg_.lr_init);
    nn::ReduceLROnPlateau plateau(cfg_.plateau_factor, cfg_.plateau_patience, cfg_.lr_floor);

    const std::int64_t stride = splits_.train_tr.images.numel() / splits_.train_tr.n();
    auto materialize = [&](const std::vector<Item>& items, int at, int batch, RngStream& brng,
                           Tensor<float>& xb, std::vector<int>& yb) {
      const int bn = std::min(batch, static_cast<int>(items.size()) - at);
      std::vector<int> shape = splits_.train_tr.images.shape;
      shape[0] = bn;
      xb = Tensor<float>(shape);
      yb.resize(static_cast<size_t>(bn));
      for (int i = 0; i < bn; ++i) {
        const Item& it = items[static_cast<size_t>(at + i)];
        float* dst = xb.ptr() + i * stride;
        switch (it.kind) {
          case 0:
            std::memcpy(dst, splits_.train_tr.images.ptr() + it.index * stride,
                        sizeof(float) * static_cast<size_t>(stride));
            yb[static_cast<size_t>(i)] = splits_.train_tr.labels[static_cast<size_t>(it.index)];
            break;
          case 1:
            std::memcpy(dst, splits_.train_adv.images.ptr() + it.index * stride,
                        sizeof(float) * static_cast<size_t>(stride));
            yb[static_cast<size_t>(i)] = splits_.train_adv.labels[static_cast<size_t>(it.index)];
            break;
          case 2: {
            Tensor<float> z({1, Models::kFeat});
            std::memcpy(z.ptr(),
                        attack_ds.features.ptr() +
                            static_cast<std::int64_t>(it.index) * Models::kFeat,
                        sizeof(float) * Models::kFeat);
            Tensor<float> rec = models_->adversary.forward(z);
            std::memcpy(dst, rec.ptr(), sizeof(float) * static_cast<size_t>(stride));
            yb[static_cast<size_t>(i)] = attack_ds.labels[static_cast<size_t>(it.index)];
            break;
          }
          case 3: {
            const int t = direct_t[static_cast<size_t>(it.index)];
            const float cs = static_cast<float>(std::sqrt(sched_.alpha_bar(t)));
            const float cn = static_cast<float>(std::sqrt(1.0 - sched_.alpha_bar(t)));
            const float* src = splits_.train_tr.images.ptr() + it.index * stride;
            for (std::int64_t j = 0; j < stride; ++j)
              dst[j] = cs * src[j] + cn * static_cast<float>(brng.normal());
            yb[static_cast<size_t>(i)] = splits_.train_tr.labels[static_cast<size_t>(it.index)];
            break;
          }
        }
      }
    };

    RngStream ep_rng = rng.child(13);
    for (int ep = 0; ep < cfg_.epochs_stage3; ++ep) {
      ep_rng.shuffle(train_items);
      double ep_loss = 0.0;
      int steps = 0;
      for (int at = 0; at < static_cast<int>(train_items.size()); at += cfg_.batch) {
        Tensor<float> xb;
        std::vector<int> yb;
        materialize(train_items, at, cfg_.batch, ep_rng, xb, yb);
        opt.zero_grad();
        Tensor<float> scores = models_->strong.forward(xb);
        Tensor<float> d;
        const double loss = nn::softmax_ce(scores, yb, d);
        check_finite(loss, "stage3_strong");
        models_->strong.backward(d);
        opt.step();
        ep_loss += loss;
        ++steps;
      }
      RngStream vrng(mix_seed(cfg_.seed, 0xE0E4));
      double val = 0.0;
      int vsteps = 0;
      for (int at = 0; at < static_cast<int>(val_items.size()); at += cfg_.batch) {
        Tensor<float> xb;
        std::vector<int> yb;
        materialize(val_items, at, cfg_.batch, vrng, xb, yb);
        Tensor<float> scores = models_->strong.forward(xb);
        Tensor<float> d;
        val += nn::softmax_ce(scores, yb, d);
        ++vsteps;
      }
      val /= std::max(1, vsteps);
      curve_row(ep, "stage3_strong", ep_loss / steps, val, opt.lr());
      opt.set_lr(plateau.update(val, opt.lr()));
    }
    models_->flags.strong = true;
  }

  void curve_row(int epoch, const std::string& stage, double loss, double val, double lr) {
    const std::string path = cfg_.out_dir + "/training_curve.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream f(path, std::ios::app);
    if (fresh) f << "epoch,stage,loss,val_loss,lr\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6g,%.6g,%.6g\n", epoch, stage.c_str(), loss, val, lr);
    f << buf;
    std::fprintf(stderr, "[%s] epoch %d loss %.5f val %.5f lr %.2g\n", stage.c_str(), epoch, loss,
                 val, lr);
  }

  TrainConfig cfg_;
  DataSplits splits_;
  NoiseSchedule sched_;
  std::unique_ptr<Models> models_;
  Dataset train_, val_;
};

}  // namespace diffsem
