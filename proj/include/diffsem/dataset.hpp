#pragma once

#include <string>
#include <vector>

#include "diffsem/tensor.hpp"

namespace diffsem {

/// Image corpus with pixels scaled to [0,1].
struct Dataset {
  Tensor<float> images;  // [n, c, h, w]
  std::vector<int> labels;
  int n() const { return images.empty() ? 0 : images.dim(0); }
};

struct DataSplits {
  Dataset train_tr;    // 60% portion for the transmitter-receiver pair
  Dataset train_adv;   // 40% portion designated for the adversary
  Dataset test;        // official test set
};

/// MNIST IDX pair (big-endian dims, magic 0x803 images / 0x801 labels).
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

/// CIFAR-10 binary batches (3073-byte records).
Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths);

/// Deterministic seeded 60/40 partition of a training corpus.
void split_train(const Dataset& train, std::uint64_t seed, Dataset& tr, Dataset& adv);

/// Loads the named dataset from a directory laid out with the standard
/// distribution file names, applies the 60/40 split.
DataSplits ingest_dataset(const std::string& tag, const std::string& dir, std::uint64_t seed);

/// Copies rows [at, at+count) into a new dataset (order preserving).
Dataset take_rows(const Dataset& ds, const std::vector<int>& idx);

}  // namespace diffsem
