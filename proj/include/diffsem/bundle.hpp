#pragma once

#include <cstdio>
#include <map>
#include <memory>
#include <string>

#include "diffsem/models/cifar.hpp"
#include "diffsem/models/mnist.hpp"
#include "diffsem/schedule.hpp"

namespace diffsem {

/// Which components of a bundle have been trained, plus the operating point
/// the bundled adversary was trained against.
struct BundleFlags {
  bool encoder = false;
  bool classifier = false;
  bool unet_guided = false;
  bool unet_unguided = false;
  bool adversary = false;
  bool strong = false;
  bool finetuned = false;
  int adversary_t_prime = -1;
  double adversary_snr_db = 0.0;

  std::uint32_t pack() const {
    std::uint32_t f = 0;
    f |= encoder ? 1u : 0u;
    f |= classifier ? 2u : 0u;
    f |= unet_guided ? 4u : 0u;
    f |= unet_unguided ? 8u : 0u;
    f |= adversary ? 16u : 0u;
    f |= strong ? 32u : 0u;
    f |= finetuned ? 64u : 0u;
    return f;
  }
  void unpack(std::uint32_t f) {
    encoder = f & 1u;
    classifier = f & 2u;
    unet_guided = f & 4u;
    unet_unguided = f & 8u;
    adversary = f & 16u;
    strong = f & 32u;
    finetuned = f & 64u;
  }
};

template <typename S>
struct MnistModels {
  static constexpr const char* kTag = "mnist";
  static constexpr int kC = 1, kH = 28, kW = 28, kFeat = 64, kSide = 8;

  MnistEncoder<S> encoder;
  MnistClassifier<S> classifier;
  UNet<S> unet_guided{true, 1, 128};
  UNet<S> unet_unguided{false, 1, 64};
  MnistAdversary<S> adversary;
  MnistStrongClassifier<S> strong;
  BundleFlags flags;

  nn::ParamList<S> all_params() {
    nn::ParamList<S> ps;
    encoder.collect(ps, "encoder");
    classifier.collect(ps, "classifier");
    unet_guided.collect(ps, "unet_g");
    unet_unguided.collect(ps, "unet_u");
    adversary.collect(ps, "adversary");
    strong.collect(ps, "strong");
    return ps;
  }

  void init_all(RngStream& rng) {
    encoder.init(rng);
    classifier.init(rng);
    unet_guided.init(rng);
    unet_unguided.init(rng);
    adversary.init(rng);
    strong.init(rng);
  }
};

template <typename S>
struct CifarModels {
  static constexpr const char* kTag = "cifar10";
  static constexpr int kC = 3, kH = 32, kW = 32, kFeat = 192, kSide = 8;

  CifarEncoder<S> encoder;
  CifarClassifier<S> classifier;
  UNet<S> unet_guided{true, 3, 128};
  UNet<S> unet_unguided{false, 3, 64};
  CifarAdversary<S> adversary;
  CifarStrongClassifier<S> strong;
  BundleFlags flags;

  nn::ParamList<S> all_params() {
    nn::ParamList<S> ps;
    encoder.collect(ps, "encoder");
    classifier.collect(ps, "classifier");
    unet_guided.collect(ps, "unet_g");
    unet_unguided.collect(ps, "unet_u");
    adversary.collect(ps, "adversary");
    strong.collect(ps, "strong");
    return ps;
  }

  void init_all(RngStream& rng) {
    encoder.init(rng);
    classifier.init(rng);
    unet_guided.init(rng);
    unet_unguided.init(rng);
    adversary.init(rng);
    strong.init(rng);
  }
};

// ---------------------------------------------------------------------------
// Container file (format documented in docs/bundle_format.md)
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kHeadMagic[8] = {'D', 'S', 'E', 'M', 'B', 'N', 'D', '1'};
constexpr char kTailMagic[8] = {'D', 'S', 'E', 'M', 'E', 'N', 'D', '1'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

template <typename T>
void write_pod(std::FILE* f, const T& v) {
  if (std::fwrite(&v, sizeof(T), 1, f) != 1) throw std::runtime_error("bundle: write failed");
}

template <typename T>
T read_pod(std::FILE* f, const std::string& path) {
  T v;
  if (std::fread(&v, sizeof(T), 1, f) != 1)
    throw std::runtime_error("bundle: truncated file: " + path);
  return v;
}

}  // namespace detail

/// Writes a bare named-array container (same chunk layout as the full bundle
/// body). Used for per-operating-point adversary sidecar files.
void save_named_arrays(const std::string& path, const std::string& tag,
                       const nn::ParamList<float>& params);

/// Loads arrays saved by save_named_arrays into the given parameter list;
/// rejects tag or shape mismatches and truncation.
void load_named_arrays(const std::string& path, const std::string& tag,
                       const nn::ParamList<float>& params);

/// Writes the versioned weight container. All arrays are float32.
template <class Models>
void save_bundle(Models& m, const NoiseSchedule& sched, const std::string& path) {
  using namespace detail;
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("bundle: cannot open for write: " + path);
  std::FILE* fp = f.get();
  if (std::fwrite(kHeadMagic, 1, 8, fp) != 8) throw std::runtime_error("bundle: write failed");
  write_pod<std::uint32_t>(fp, 1u);  // format version
  const std::string tag = Models::kTag;
  write_pod<std::uint8_t>(fp, static_cast<std::uint8_t>(tag.size()));
  if (std::fwrite(tag.data(), 1, tag.size(), fp) != tag.size())
    throw std::runtime_error("bundle: write failed");
  write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(Models::kFeat));
  write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(sched.T));
  write_pod<double>(fp, sched.alpha_1);
  write_pod<double>(fp, sched.alpha_T);
  write_pod<std::uint32_t>(fp, m.flags.pack());
  write_pod<std::int32_t>(fp, m.flags.adversary_t_prime);
  write_pod<double>(fp, m.flags.adversary_snr_db);

  auto params = m.all_params();
  write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(params.size()));
  for (auto& p : params) {
    write_pod<std::uint16_t>(fp, static_cast<std::uint16_t>(p.name.size()));
    if (std::fwrite(p.name.data(), 1, p.name.size(), fp) != p.name.size())
      throw std::runtime_error("bundle: write failed");
    write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(p.value->shape.size()));
    for (int d : p.value->shape) write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(d));
    const size_t n = static_cast<size_t>(p.value->numel());
    if (std::fwrite(p.value->ptr(), sizeof(float), n, fp) != n)
      throw std::runtime_error("bundle: write failed");
  }
  if (std::fwrite(kTailMagic, 1, 8, fp) != 8) throw std::runtime_error("bundle: write failed");
}

/// Loads a container into an existing model set; rejects tag/version/shape
/// mismatches and truncated files without partially mutating on failure paths
/// that matter (weights land only after every array parsed).
template <class Models>
NoiseSchedule load_bundle(Models& m, const std::string& path) {
  using namespace detail;
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("bundle: cannot open: " + path);
  std::FILE* fp = f.get();
  char magic[8];
  if (std::fread(magic, 1, 8, fp) != 8 || std::memcmp(magic, kHeadMagic, 8) != 0)
    throw std::runtime_error("bundle: bad magic: " + path);
  const auto version = read_pod<std::uint32_t>(fp, path);
  if (version != 1u) throw std::runtime_error("bundle: unsupported format version");
  const auto tag_len = read_pod<std::uint8_t>(fp, path);
  std::string tag(tag_len, '\0');
  if (std::fread(tag.data(), 1, tag_len, fp) != tag_len)
    throw std::runtime_error("bundle: truncated file: " + path);
  if (tag != Models::kTag)
    throw std::runtime_error("bundle: dataset tag mismatch: file has '" + tag + "', expected '" +
                             Models::kTag + "'");
  const auto k = read_pod<std::uint32_t>(fp, path);
  if (k != static_cast<std::uint32_t>(Models::kFeat))
    throw std::runtime_error("bundle: feature dimension mismatch");
  const auto t_steps = read_pod<std::uint32_t>(fp, path);
  const double a1 = read_pod<double>(fp, path);
  const double aT = read_pod<double>(fp, path);
  BundleFlags flags;
  flags.unpack(read_pod<std::uint32_t>(fp, path));
  flags.adversary_t_prime = read_pod<std::int32_t>(fp, path);
  flags.adversary_snr_db = read_pod<double>(fp, path);

  const auto count = read_pod<std::uint32_t>(fp, path);
  std::map<std::string, Tensor<float>> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint16_t>(fp, path);
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, fp) != name_len)
      throw std::runtime_error("bundle: truncated file: " + path);
    const auto ndim = read_pod<std::uint32_t>(fp, path);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(fp, path));
    Tensor<float> t(shape);
    const size_t n = static_cast<size_t>(t.numel());
    if (std::fread(t.ptr(), sizeof(float), n, fp) != n)
      throw std::runtime_error("bundle: truncated file: " + path);
    arrays.emplace(std::move(name), std::move(t));
  }
  if (std::fread(magic, 1, 8, fp) != 8 || std::memcmp(magic, kTailMagic, 8) != 0)
    throw std::runtime_error("bundle: truncated file: " + path);

  auto params = m.all_params();
  if (params.size() != arrays.size()) throw std::runtime_error("bundle: array set mismatch");
  for (auto& p : params) {
    auto it = arrays.find(p.name);
    if (it == arrays.end()) throw std::runtime_error("bundle: missing array " + p.name);
    if (it->second.shape != p.value->shape)
      throw std::runtime_error("bundle: shape mismatch for " + p.name);
  }
  for (auto& p : params) *p.value = arrays.at(p.name);
  m.flags = flags;
  return build_schedule(a1, aT, static_cast<int>(t_steps));
}

}  // namespace diffsem
