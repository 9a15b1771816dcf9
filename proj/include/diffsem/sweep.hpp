#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffsem/adversary.hpp"
#include "diffsem/bundle.hpp"
#include "diffsem/dataset.hpp"
#include "diffsem/metrics.hpp"
#include "diffsem/png.hpp"
#include "diffsem/receiver.hpp"

namespace diffsem {

/// Distorts an image batch with the schedule's forward-noising law applied
/// pixelwise. Output is the raw (unclamped) copy used for metrics; display
/// copies get clamped only when written as PNG.
inline Tensor<float> baseline_direct(const Tensor<float>& images, int t, const NoiseSchedule& s,
                                     RngStream& rng) {
  const float cs = static_cast<float>(std::sqrt(s.alpha_bar(t)));
  const float cn = static_cast<float>(std::sqrt(1.0 - s.alpha_bar(t)));
  Tensor<float> out(images.shape);
  for (std::int64_t i = 0; i < images.numel(); ++i)
    out[i] = cs * images[i] + cn * static_cast<float>(rng.normal());
  return out;
}

/// Swaps the upper-left and lower-right quadrants of every image.
inline Tensor<float> baseline_permute(const Tensor<float>& images) {
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("baseline_permute: extents must be even");
  Tensor<float> out = images;
  const int hh = h / 2, hw = w / 2;
  for (int i = 0; i < n; ++i)
    for (int cc = 0; cc < c; ++cc) {
      float* p = out.ptr() + (static_cast<std::int64_t>(i) * c + cc) * h * w;
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < hw; ++x)
          std::swap(p[y * w + x], p[(y + hh) * w + (x + hw)]);
    }
  return out;
}

struct SweepConfig {
  std::vector<double> snr_list{15.0};
  std::vector<int> t_grid{0, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500};
  std::vector<ReceiverMode> modes{ReceiverMode::kClassifierOnly, ReceiverMode::kDiffSem,
                                  ReceiverMode::kEDiffSem};
  bool baseline_direct_mode = false;
  bool baseline_permutation_mode = false;
  bool compensation = true;
  int eval_limit = 0;     // 0 = full test set
  int grid_samples = 16;  // reconstruction PNG sample count; 0 disables
  int eval_batch = 250;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string adversary_dir;  // defaults to out_dir + "/adversaries"
  bool train_missing_adversaries = false;
  int adversary_epochs = 20;
  double adversary_lr = 1e-3;
  std::string csv_name = "sweep.csv";
};

inline std::string format_snr(double snr_db) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", snr_db);
  return buf;
}

inline std::string adversary_sidecar_name(const std::string& tag, double snr_db, int t) {
  return tag + "_adversary_" + format_snr(snr_db) + "db_t" + std::to_string(t) + ".dsb";
}

inline std::string csv_field(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string records_to_csv(const std::vector<MetricsRecord>& rows) {
  std::ostringstream os;
  os << "t,snr_db,mode,receiver_accuracy,adversary_fidelity,mean_ssim,mean_psnr_db,esnr_db\n";
  for (const auto& r : rows) {
    os << r.t << "," << csv_field(r.snr_db) << "," << r.mode << ","
       << csv_field(r.receiver_accuracy) << "," << csv_field(r.adversary_fidelity) << ","
       << csv_field(r.mean_ssim) << "," << csv_field(r.mean_psnr_db) << ","
       << csv_field(r.esnr_db) << "\n";
  }
  return os.str();
}

/// Strong-classifier accuracy over reconstructions, chunked to keep the
/// convolutional intermediates bounded.
template <class Models>
double fidelity_chunked(Models& m, const Tensor<float>& x_hats, const std::vector<int>& truths,
                        int batch) {
  if (!m.flags.strong)
    throw std::logic_error("semantic fidelity requested with an untrained strong classifier");
  const int n = x_hats.dim(0);
  const std::int64_t stride = x_hats.numel() / n;
  std::vector<int> preds;
  preds.reserve(static_cast<size_t>(n));
  for (int at = 0; at < n; at += batch) {
    const int bn = std::min(batch, n - at);
    std::vector<int> shape = x_hats.shape;
    shape[0] = bn;
    Tensor<float> xb(shape);
    std::memcpy(xb.ptr(), x_hats.ptr() + at * stride,
                sizeof(float) * static_cast<size_t>(bn * stride));
    const auto p = nn::argmax_rows(m.strong.forward(xb));
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return accuracy(preds, truths);
}

template <class Models>
class SweepRunner {
 public:
  SweepRunner(Models& m, const NoiseSchedule& s, const Dataset& test, SweepConfig cfg)
      : m_(m), sched_(s), cfg_(std::move(cfg)) {
    if (cfg_.adversary_dir.empty()) cfg_.adversary_dir = cfg_.out_dir + "/adversaries";
    const int n = cfg_.eval_limit > 0 ? std::min(cfg_.eval_limit, test.n()) : test.n();
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    eval_ = take_rows(test, idx);
  }

  /// Trains one per-operating-point adversary and writes the sidecar file.
  void train_cell_adversary(double snr_db, int t, const Dataset& adversary_split) {
    TransmitterConfig tc;
    tc.t_prime = t;
    tc.channel = ChannelConfig{ChannelKind::Awgn, snr_db,
                               mix_seed(cfg_.seed, cell_tag(snr_db, t, 0xAD))};
    tc.compensation_enabled = cfg_.compensation;
    Transmitter<Models> tx(m_, sched_, tc);
    RngStream collect_rng(mix_seed(cfg_.seed, cell_tag(snr_db, t, 0xC0)));
    AttackDataset ds =
        collect_pairs(tx, adversary_split.images, adversary_split.labels, collect_rng);
    RngStream train_rng(mix_seed(cfg_.seed, cell_tag(snr_db, t, 0xAA)));
    train_inversion(m_, ds, cfg_.adversary_epochs, cfg_.adversary_lr, train_rng);
    std::filesystem::create_directories(cfg_.adversary_dir);
    nn::ParamList<float> ps;
    m_.adversary.collect(ps, "adversary");
    save_named_arrays(cfg_.adversary_dir + "/" + adversary_sidecar_name(Models::kTag, snr_db, t),
                      std::string(Models::kTag) + "-adversary", ps);
  }

  /// Runs every (snr, t, mode) cell plus requested baselines; returns CSV rows
  /// in deterministic order and writes the table and reconstruction grids.
  std::vector<MetricsRecord> run(const Dataset* adversary_split = nullptr) {
    std::vector<MetricsRecord> rows;
    std::filesystem::create_directories(cfg_.out_dir);
    for (double snr : cfg_.snr_list)
      for (int t : cfg_.t_grid) run_cell(snr, t, adversary_split, rows);
    std::ofstream f(cfg_.out_dir + "/" + cfg_.csv_name, std::ios::binary);
    f << records_to_csv(rows);
    return rows;
  }

 private:
  static std::uint64_t cell_tag(double snr_db, int t, std::uint64_t salt) {
    const std::int64_t snr_milli = static_cast<std::int64_t>(std::llround(snr_db * 1000.0));
    return (static_cast<std::uint64_t>(snr_milli) << 20) ^ static_cast<std::uint64_t>(t) ^
           (salt << 56);
  }

  double cell_esnr(int t) const {
    if (t < 1) return std::nan("");
    return esnr_db(sched_, t, static_cast<double>(Models::kFeat), Models::kFeat);
  }

  void run_cell(double snr, int t, const Dataset* adversary_split,
                std::vector<MetricsRecord>& rows) {
    TransmitterConfig tc;
    tc.t_prime = t;
    tc.channel = ChannelConfig{ChannelKind::Awgn, snr, 0};
    tc.compensation_enabled = cfg_.compensation;
    Transmitter<Models> tx(m_, sched_, tc);
    Receiver<Models> rx(m_, sched_);

    // Receiver legs share one received batch per cell.
    const int n = eval_.n();
    Tensor<float> z_hat({n, Models::kFeat});
    {
      RngStream rng(mix_seed(cfg_.seed, cell_tag(snr, t, 0x1)));
      std::vector<int> order(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
      for (int at = 0; at < n; at += cfg_.eval_batch) {
        const int bn = std::min(cfg_.eval_batch, n - at);
        Tensor<float> xb = slice_rows(eval_.images, at, bn);
        auto res = tx.transmit_pipeline(xb, rng);
        Tensor<float> zb = tx.through_channel(res.z, rng);
        std::memcpy(z_hat.ptr() + static_cast<std::int64_t>(at) * Models::kFeat, zb.ptr(),
                    sizeof(float) * static_cast<size_t>(zb.numel()));
      }
    }

    // Adversary leg: sidecar weights per operating point, the bundled
    // adversary when its operating point matches, or freshly trained.
    double fid = std::nan(""), mssim = std::nan(""), mpsnr = std::nan("");
    const std::string sidecar =
        cfg_.adversary_dir + "/" + adversary_sidecar_name(Models::kTag, snr, t);
    bool have_adv = false;
    if (std::filesystem::exists(sidecar)) {
      nn::ParamList<float> ps;
      m_.adversary.collect(ps, "adversary");
      load_named_arrays(sidecar, std::string(Models::kTag) + "-adversary", ps);
      m_.flags.adversary = true;
      m_.flags.adversary_t_prime = t;
      m_.flags.adversary_snr_db = snr;
      have_adv = true;
    } else if (cfg_.train_missing_adversaries && adversary_split) {
      train_cell_adversary(snr, t, *adversary_split);
      have_adv = true;
    } else if (m_.flags.adversary && m_.flags.adversary_t_prime == t &&
               m_.flags.adversary_snr_db == snr) {
      have_adv = true;
    }
    if (have_adv) {
      RngStream arng(mix_seed(cfg_.seed, cell_tag(snr, t, 0x2)));
      Tensor<float> recon = attack_batch(m_, tx, eval_.images, arng, cfg_.eval_batch);
      fid = fidelity_chunked(m_, recon, eval_.labels, cfg_.eval_batch);
      mssim = mean_image_metric(recon, /*use_ssim=*/true);
      mpsnr = mean_image_metric(recon, /*use_ssim=*/false);
      if (cfg_.grid_samples > 0) {
        write_image_grid(grid_path(snr, t, "adversary"), recon, cfg_.grid_samples);
        write_image_grid(grid_path(snr, t, "original"), eval_.images, cfg_.grid_samples);
      }
    }

    for (ReceiverMode mode : cfg_.modes) {
      MetricsRecord r;
      r.t = t;
      r.snr_db = snr;
      r.mode = mode_name(mode);
      r.esnr_db = cell_esnr(t);
      std::vector<int> preds;
      preds.reserve(static_cast<size_t>(n));
      for (int at = 0; at < n; at += cfg_.eval_batch) {
        const int bn = std::min(cfg_.eval_batch, n - at);
        Tensor<float> zb({bn, Models::kFeat});
        std::memcpy(zb.ptr(), z_hat.ptr() + static_cast<std::int64_t>(at) * Models::kFeat,
                    sizeof(float) * static_cast<size_t>(zb.numel()));
        auto res = rx.receive(zb, t, mode);
        preds.insert(preds.end(), res.labels.begin(), res.labels.end());
      }
      r.receiver_accuracy = accuracy(preds, eval_.labels);
      r.adversary_fidelity = fid;
      r.mean_ssim = mssim;
      r.mean_psnr_db = mpsnr;
      rows.push_back(std::move(r));
    }

    if (cfg_.baseline_direct_mode) rows.push_back(baseline_row(snr, t, /*permute=*/false));
    if (cfg_.baseline_permutation_mode) rows.push_back(baseline_row(snr, t, /*permute=*/true));
  }

  MetricsRecord baseline_row(double snr, int t, bool permute) {
    RngStream rng(mix_seed(cfg_.seed, cell_tag(snr, t, permute ? 0x4 : 0x3)));
    Tensor<float> base = permute ? baseline_permute(eval_.images) : eval_.images;
    Tensor<float> distorted = (t > 0) ? baseline_direct(base, t, sched_, rng) : base;
    MetricsRecord r;
    r.t = t;
    r.snr_db = snr;
    r.mode = permute ? "permutation" : "direct";
    r.esnr_db = cell_esnr(t);
    r.adversary_fidelity = fidelity_chunked(m_, distorted, eval_.labels, cfg_.eval_batch);
    r.mean_ssim = mean_image_metric(distorted, true);
    r.mean_psnr_db = mean_image_metric(distorted, false);
    if (cfg_.grid_samples > 0)
      write_image_grid(grid_path(snr, t, r.mode), distorted, cfg_.grid_samples);
    return r;
  }

  std::string grid_path(double snr, int t, const std::string& role) const {
    return cfg_.out_dir + "/" + Models::kTag + "_" + format_snr(snr) + "db_t" +
           std::to_string(t) + "_" + role + ".png";
  }

  double mean_image_metric(const Tensor<float>& recon, bool use_ssim) const {
    const int n = recon.dim(0);
    const std::int64_t stride = recon.numel() / n;
    std::vector<int> one = recon.shape;
    one[0] = 1;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      Tensor<float> a(one), b(one);
      std::memcpy(a.ptr(), eval_.images.ptr() + i * stride,
                  sizeof(float) * static_cast<size_t>(stride));
      std::memcpy(b.ptr(), recon.ptr() + i * stride,
                  sizeof(float) * static_cast<size_t>(stride));
      acc += use_ssim ? ssim(a, b) : psnr(a, b);
    }
    return acc / n;
  }

  static Tensor<float> slice_rows(const Tensor<float>& t, int at, int count) {
    const int n = t.dim(0);
    const std::int64_t stride = t.numel() / n;
    std::vector<int> shape = t.shape;
    shape[0] = count;
    Tensor<float> out(shape);
    std::memcpy(out.ptr(), t.ptr() + at * stride,
                sizeof(float) * static_cast<size_t>(count * stride));
    return out;
  }

  Models& m_;
  const NoiseSchedule& sched_;
  SweepConfig cfg_;
  Dataset eval_;
};

}  // namespace diffsem
