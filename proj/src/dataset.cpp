#include "diffsem/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "diffsem/rng.hpp"

namespace diffsem {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint32_t read_be32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4)
    throw std::runtime_error("dataset: truncated file: " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  FilePtr fi(std::fopen(images_path.c_str(), "rb"));
  if (!fi) throw std::runtime_error("dataset: cannot open: " + images_path);
  if (read_be32(fi.get(), images_path) != 0x00000803u)
    throw std::runtime_error("dataset: bad magic in " + images_path);
  const int n = static_cast<int>(read_be32(fi.get(), images_path));
  const int h = static_cast<int>(read_be32(fi.get(), images_path));
  const int w = static_cast<int>(read_be32(fi.get(), images_path));

  Dataset ds;
  ds.images = Tensor<float>({n, 1, h, w});
  std::vector<unsigned char> row(static_cast<size_t>(h) * w);
  for (int i = 0; i < n; ++i) {
    if (std::fread(row.data(), 1, row.size(), fi.get()) != row.size())
      throw std::runtime_error("dataset: truncated file: " + images_path);
    float* dst = ds.images.ptr() + static_cast<std::int64_t>(i) * h * w;
    for (size_t j = 0; j < row.size(); ++j) dst[j] = static_cast<float>(row[j]) / 255.0f;
  }

  FilePtr fl(std::fopen(labels_path.c_str(), "rb"));
  if (!fl) throw std::runtime_error("dataset: cannot open: " + labels_path);
  if (read_be32(fl.get(), labels_path) != 0x00000801u)
    throw std::runtime_error("dataset: bad magic in " + labels_path);
  const int nl = static_cast<int>(read_be32(fl.get(), labels_path));
  if (nl != n) throw std::runtime_error("dataset: image/label count mismatch: " + labels_path);
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    unsigned char v;
    if (std::fread(&v, 1, 1, fl.get()) != 1)
      throw std::runtime_error("dataset: truncated file: " + labels_path);
    if (v > 9) throw std::runtime_error("dataset: label out of range in " + labels_path);
    ds.labels[static_cast<size_t>(i)] = static_cast<int>(v);
  }
  return ds;
}

Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths) {
  constexpr int kRecord = 3073;  // 1 label byte + 3*32*32 pixels
  constexpr int kPixels = 3072;
  std::vector<std::vector<unsigned char>> raw;
  std::vector<int> labels;
  for (const auto& path : batch_paths) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("dataset: cannot open: " + path);
    std::vector<unsigned char> rec(kRecord);
    while (true) {
      const size_t got = std::fread(rec.data(), 1, rec.size(), f.get());
      if (got == 0) break;
      if (got != rec.size())
        throw std::runtime_error("dataset: truncated record in " + path);
      if (rec[0] > 9) throw std::runtime_error("dataset: label out of range in " + path);
      labels.push_back(static_cast<int>(rec[0]));
      raw.emplace_back(rec.begin() + 1, rec.end());
    }
  }
  const int n = static_cast<int>(raw.size());
  if (n == 0) throw std::runtime_error("dataset: no CIFAR records found");
  Dataset ds;
  ds.images = Tensor<float>({n, 3, 32, 32});
  for (int i = 0; i < n; ++i) {
    float* dst = ds.images.ptr() + static_cast<std::int64_t>(i) * kPixels;
    for (int j = 0; j < kPixels; ++j) dst[j] = static_cast<float>(raw[static_cast<size_t>(i)][static_cast<size_t>(j)]) / 255.0f;
  }
  ds.labels = std::move(labels);
  return ds;
}

Dataset take_rows(const Dataset& ds, const std::vector<int>& idx) {
  const int n = ds.n();
  const std::int64_t stride = ds.images.numel() / n;
  std::vector<int> shape = ds.images.shape;
  shape[0] = static_cast<int>(idx.size());
  Dataset out;
  out.images = Tensor<float>(shape);
  out.labels.resize(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.images.ptr() + static_cast<std::int64_t>(i) * stride,
                ds.images.ptr() + static_cast<std::int64_t>(idx[i]) * stride,
                sizeof(float) * static_cast<size_t>(stride));
    out.labels[i] = ds.labels[static_cast<size_t>(idx[i])];
  }
  return out;
}

void split_train(const Dataset& train, std::uint64_t seed, Dataset& tr, Dataset& adv) {
  const int n = train.n();
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  RngStream rng(mix_seed(seed, 0x51717));
  rng.shuffle(order);
  const int n_tr = static_cast<int>(static_cast<std::int64_t>(n) * 60 / 100);
  std::vector<int> tr_idx(order.begin(), order.begin() + n_tr);
  std::vector<int> adv_idx(order.begin() + n_tr, order.end());
  tr = take_rows(train, tr_idx);
  adv = take_rows(train, adv_idx);
}

DataSplits ingest_dataset(const std::string& tag, const std::string& dir, std::uint64_t seed) {
  DataSplits s;
  Dataset train;
  if (tag == "mnist") {
    train = load_mnist_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    s.test = load_mnist_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  } else if (tag == "cifar10") {
    std::vector<std::string> batches;
    for (int i = 1; i <= 5; ++i)
      batches.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    train = load_cifar10_bin(batches);
    s.test = load_cifar10_bin({dir + "/test_batch.bin"});
  } else {
    throw std::invalid_argument("ingest_dataset: unknown tag '" + tag + "'");
  }
  split_train(train, seed, s.train_tr, s.train_adv);
  return s;
}

}  // namespace diffsem
