#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffsem {

/// Dense row-major tensor over a flat buffer. Shape conventions used in this
/// project: images are [n, c, h, w], feature blocks are [n, k], label/score
/// tables are [n, classes].
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)), data(count(shape)) {}
  Tensor(std::vector<int> sh, S fill_value)
      : shape(std::move(sh)), data(count(shape), fill_value) {}

  static std::int64_t count(const std::vector<int>& sh) {
    std::int64_t n = 1;
    for (int d : sh) {
      if (d < 0) throw std::invalid_argument("Tensor: negative extent");
      n *= d;
    }
    return sh.empty() ? 0 : n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }

  void zero() { std::fill(data.begin(), data.end(), S(0)); }

  /// Reinterpret the buffer with a new shape of identical element count.
  Tensor<S>& reshape(std::vector<int> sh) {
    if (count(sh) != numel()) throw std::invalid_argument("Tensor::reshape: element count mismatch");
    shape = std::move(sh);
    return *this;
  }

  Tensor<S> reshaped(std::vector<int> sh) const {
    Tensor<S> t = *this;
    t.reshape(std::move(sh));
    return t;
  }

  /// Sum of squared entries over the whole buffer.
  double sum_sq() const {
    double acc = 0.0;
    for (const S& v : data) acc += static_cast<double>(v) * static_cast<double>(v);
    return acc;
  }

  /// Sum of squared entries of one row of a [n, ...] tensor.
  double row_sum_sq(int row) const {
    const std::int64_t stride = numel() / shape.at(0);
    const S* p = ptr() + stride * row;
    double acc = 0.0;
    for (std::int64_t i = 0; i < stride; ++i) acc += static_cast<double>(p[i]) * static_cast<double>(p[i]);
    return acc;
  }

  bool all_finite() const {
    for (const S& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename S>
std::string shape_str(const Tensor<S>& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

}  // namespace diffsem
