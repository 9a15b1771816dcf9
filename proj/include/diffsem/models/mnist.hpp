#pragma once

#include "diffsem/models/blocks.hpp"
#include "diffsem/models/unet.hpp"

namespace diffsem {

/// Encoder for 1x28x28 inputs; emits k = 64 features (flattened 1x8x8 map).
template <typename S>
struct MnistEncoder {
  nn::Conv2d<S> c1{1, 16, 3, 2, 1};
  nn::Conv2d<S> c2{16, 32, 3, 2, 2, 2, 2, 2};
  nn::Conv2d<S> c3{32, 1, 3, 1, 1};
  nn::LeakyReLU<S> a1, a2;
  nn::LayerNorm<S> ln{64};

  void init(RngStream& rng) {
    c1.init(rng);
    c2.init(rng);
    c3.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.ndim() != 4 || x.dim(1) != 1 || x.dim(2) != 28 || x.dim(3) != 28)
      throw std::invalid_argument("MnistEncoder: expected [n,1,28,28]");
    Tensor<S> h = a1.forward(c1.forward(x));
    if (h.dim(1) != 16 || h.dim(2) != 14) throw std::logic_error("MnistEncoder: stage-1 shape");
    h = a2.forward(c2.forward(h));
    if (h.dim(1) != 32 || h.dim(2) != 8) throw std::logic_error("MnistEncoder: stage-2 shape");
    h = c3.forward(h);
    if (h.dim(1) != 1 || h.dim(2) != 8) throw std::logic_error("MnistEncoder: stage-3 shape");
    const int n = h.dim(0);
    return ln.forward(h.reshaped({n, 64}));
  }

  Tensor<S> backward(const Tensor<S>& dfeat) {
    const int n = dfeat.dim(0);
    Tensor<S> d = ln.backward(dfeat).reshaped({n, 1, 8, 8});
    d = c2.backward(a2.backward(c3.backward(d)));
    return c1.backward(a1.backward(d));
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    c1.collect(ps, prefix + ".c1");
    c2.collect(ps, prefix + ".c2");
    c3.collect(ps, prefix + ".c3");
    ln.collect(ps, prefix + ".ln");
  }
};

/// Receiver-side classifier over cat(f_hat, z_hat, t/T) of width 64*2+1.
template <typename S>
struct MnistClassifier {
  nn::Linear<S> l1{129, 129};
  nn::Linear<S> l2{129, 10};
  nn::ReLU<S> act;

  void init(RngStream& rng) {
    l1.init(rng);
    l2.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& f_hat, const Tensor<S>& z_hat, const Tensor<S>& t_norm) {
    const int n = f_hat.dim(0);
    if (f_hat.numel() != static_cast<std::int64_t>(n) * 64 || z_hat.numel() != f_hat.numel())
      throw std::invalid_argument("MnistClassifier: feature width mismatch");
    Tensor<S> in({n, 129});
    for (int i = 0; i < n; ++i) {
      S* p = in.ptr() + static_cast<std::int64_t>(i) * 129;
      std::memcpy(p, f_hat.ptr() + static_cast<std::int64_t>(i) * 64, 64 * sizeof(S));
      std::memcpy(p + 64, z_hat.ptr() + static_cast<std::int64_t>(i) * 64, 64 * sizeof(S));
      p[128] = t_norm[i];
    }
    return l2.forward(act.forward(l1.forward(in)));
  }

  /// Accumulates parameter grads and splits the input gradient back into the
  /// f_hat and z_hat slots (the t slot is not differentiated).
  void backward(const Tensor<S>& dlogits, Tensor<S>& df_hat, Tensor<S>& dz_hat) {
    Tensor<S> din = l1.backward(act.backward(l2.backward(dlogits)));
    const int n = din.dim(0);
    df_hat = Tensor<S>({n, 64});
    dz_hat = Tensor<S>({n, 64});
    for (int i = 0; i < n; ++i) {
      const S* p = din.ptr() + static_cast<std::int64_t>(i) * 129;
      std::memcpy(df_hat.ptr() + static_cast<std::int64_t>(i) * 64, p, 64 * sizeof(S));
      std::memcpy(dz_hat.ptr() + static_cast<std::int64_t>(i) * 64, p + 64, 64 * sizeof(S));
    }
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    l1.collect(ps, prefix + ".l1");
    l2.collect(ps, prefix + ".l2");
  }
};

/// Third-party judge network; higher capacity than the receiver classifier.
template <typename S>
struct MnistStrongClassifier {
  nn::Linear<S> l1{784, 784};
  nn::Linear<S> l2{784, 128};
  nn::Linear<S> l3{128, 10};
  nn::Tanh<S> a1, a2;
  nn::Sigmoid<S> out_act;

  void init(RngStream& rng) {
    l1.init(rng);
    l2.init(rng);
    l3.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.dim(0);
    if (x.numel() != static_cast<std::int64_t>(n) * 784)
      throw std::invalid_argument("MnistStrongClassifier: expected 1x28x28 images");
    Tensor<S> h = x.reshaped({n, 784});
    return l3.forward(a2.forward(l2.forward(a1.forward(l1.forward(h)))));
  }

  Tensor<S> probabilities(const Tensor<S>& logits) { return out_act.forward(logits); }

  Tensor<S> backward(const Tensor<S>& dlogits) {
    return l1.backward(a1.backward(l2.backward(a2.backward(l3.backward(dlogits)))));
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    l1.collect(ps, prefix + ".l1");
    l2.collect(ps, prefix + ".l2");
    l3.collect(ps, prefix + ".l3");
  }
};

/// Inversion decoder: received feature -> 1x28x28 image estimate.
template <typename S>
struct MnistAdversary {
  nn::Linear<S> l1{64, 784};
  nn::Linear<S> l2{784, 784};
  nn::Tanh<S> act;

  void init(RngStream& rng) {
    l1.init(rng);
    l2.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& z_hat) {
    const int n = z_hat.dim(0);
    if (z_hat.numel() != static_cast<std::int64_t>(n) * 64)
      throw std::invalid_argument("MnistAdversary: expected length-64 features");
    Tensor<S> y = l2.forward(act.forward(l1.forward(z_hat)));
    return y.reshaped({n, 1, 28, 28});
  }

  Tensor<S> backward(const Tensor<S>& dimg) {
    const int n = dimg.dim(0);
    return l1.backward(act.backward(l2.backward(dimg.reshaped({n, 784}))));
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    l1.collect(ps, prefix + ".l1");
    l2.collect(ps, prefix + ".l2");
  }
};

}  // namespace diffsem
