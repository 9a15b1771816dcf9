#pragma once

#include "diffsem/nn/layers.hpp"

namespace diffsem {

/// conv3x3 -> GroupNorm -> GELU with a skip (identity, or 1x1 projection when
/// the channel count or stride changes).
template <typename S>
struct ResidualConvBlock {
  int in_c = 0, out_c = 0, stride = 1;
  nn::Conv2d<S> conv;
  nn::GroupNorm<S> norm;
  nn::GELU<S> act;
  bool has_proj = false;
  nn::Conv2d<S> proj;

  ResidualConvBlock() = default;
  ResidualConvBlock(int ic, int oc, int s = 1)
      : in_c(ic), out_c(oc), stride(s), conv(ic, oc, 3, s, 1), norm(oc) {
    has_proj = (ic != oc) || (s != 1);
    if (has_proj) proj = nn::Conv2d<S>(ic, oc, 1, s, 0);
  }

  void init(RngStream& rng) {
    conv.init(rng);
    if (has_proj) proj.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> h = act.forward(norm.forward(conv.forward(x)));
    if (has_proj) {
      Tensor<S> s = proj.forward(x);
      for (std::int64_t i = 0; i < h.numel(); ++i) h[i] += s[i];
    } else {
      for (std::int64_t i = 0; i < h.numel(); ++i) h[i] += x[i];
    }
    return h;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx = conv.backward(norm.backward(act.backward(dy)));
    if (has_proj) {
      Tensor<S> ds = proj.backward(dy);
      for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += ds[i];
    } else {
      for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
    }
    return dx;
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    conv.collect(ps, prefix + ".conv");
    norm.collect(ps, prefix + ".norm");
    if (has_proj) proj.collect(ps, prefix + ".proj");
  }
};

/// Two-layer fully connected embedding (Linear -> GELU -> Linear).
template <typename S>
struct EmbedFC {
  nn::Linear<S> l1, l2;
  nn::GELU<S> act;

  EmbedFC() = default;
  EmbedFC(int in, int out) : l1(in, out), l2(out, out) {}

  void init(RngStream& rng) {
    l1.init(rng);
    l2.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x) { return l2.forward(act.forward(l1.forward(x))); }
  Tensor<S> backward(const Tensor<S>& dy) { return l1.backward(act.backward(l2.backward(dy))); }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    l1.collect(ps, prefix + ".l1");
    l2.collect(ps, prefix + ".l2");
  }
};

/// Concatenates b after a along the channel axis.
template <typename S>
Tensor<S> cat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w)
    throw std::invalid_argument("cat_channels: extent mismatch");
  Tensor<S> out({n, ca + cb, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.ptr() + (static_cast<std::int64_t>(i) * (ca + cb)) * plane,
                a.ptr() + static_cast<std::int64_t>(i) * ca * plane,
                sizeof(S) * static_cast<size_t>(ca * plane));
    std::memcpy(out.ptr() + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane,
                b.ptr() + static_cast<std::int64_t>(i) * cb * plane,
                sizeof(S) * static_cast<size_t>(cb * plane));
  }
  return out;
}

/// Splits a channel-concatenated gradient back into its two parts.
template <typename S>
void split_channels(const Tensor<S>& d, int ca, Tensor<S>& da, Tensor<S>& db) {
  const int n = d.dim(0), c = d.dim(1), h = d.dim(2), w = d.dim(3);
  const int cb = c - ca;
  da = Tensor<S>({n, ca, h, w});
  db = Tensor<S>({n, cb, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::memcpy(da.ptr() + static_cast<std::int64_t>(i) * ca * plane,
                d.ptr() + (static_cast<std::int64_t>(i) * c) * plane,
                sizeof(S) * static_cast<size_t>(ca * plane));
    std::memcpy(db.ptr() + static_cast<std::int64_t>(i) * cb * plane,
                d.ptr() + (static_cast<std::int64_t>(i) * c + ca) * plane,
                sizeof(S) * static_cast<size_t>(cb * plane));
  }
}

}  // namespace diffsem
