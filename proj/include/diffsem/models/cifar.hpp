#pragma once

#include "diffsem/models/blocks.hpp"
#include "diffsem/models/unet.hpp"

namespace diffsem {

/// Encoder for 3x32x32 inputs; emits k = 192 features (flattened 3x8x8 map).
template <typename S>
struct CifarEncoder {
  nn::Conv2d<S> c1{3, 16, 3, 1, 1};
  nn::Conv2d<S> c2{16, 32, 3, 2, 1};
  ResidualConvBlock<S> res{32, 32};
  nn::Conv2d<S> c3{32, 3, 3, 2, 1};
  nn::LeakyReLU<S> a1, a2, a3;
  nn::LayerNorm<S> ln{192};

  void init(RngStream& rng) {
    c1.init(rng);
    c2.init(rng);
    res.init(rng);
    c3.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != 32 || x.dim(3) != 32)
      throw std::invalid_argument("CifarEncoder: expected [n,3,32,32]");
    Tensor<S> h = a1.forward(c1.forward(x));
    if (h.dim(1) != 16 || h.dim(2) != 32) throw std::logic_error("CifarEncoder: stage-1 shape");
    h = a2.forward(c2.forward(h));
    if (h.dim(1) != 32 || h.dim(2) != 16) throw std::logic_error("CifarEncoder: stage-2 shape");
    h = res.forward(h);
    h = a3.forward(c3.forward(h));
    if (h.dim(1) != 3 || h.dim(2) != 8) throw std::logic_error("CifarEncoder: stage-4 shape");
    const int n = h.dim(0);
    return ln.forward(h.reshaped({n, 192}));
  }

  Tensor<S> backward(const Tensor<S>& dfeat) {
    const int n = dfeat.dim(0);
    Tensor<S> d = ln.backward(dfeat).reshaped({n, 3, 8, 8});
    d = res.backward(c3.backward(a3.backward(d)));
    d = c2.backward(a2.backward(d));
    return c1.backward(a1.backward(d));
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    c1.collect(ps, prefix + ".c1");
    c2.collect(ps, prefix + ".c2");
    res.collect(ps, prefix + ".res");
    c3.collect(ps, prefix + ".c3");
    ln.collect(ps, prefix + ".ln");
  }
};

/// Receiver-side classifier over the 6x8x9 concatenation of f_hat, z_hat and
/// a padded t column.
template <typename S>
struct CifarClassifier {
  nn::Conv2d<S> c1{6, 64, 3, 1, 1, 1, 1, 0};
  nn::Conv2d<S> c2{64, 512, 3, 2, 1};
  ResidualConvBlock<S> res{512, 512};
  nn::AdaptiveAvgPool2d<S> pool{1, 1};
  nn::Linear<S> head{512, 10};
  nn::Tanh<S> a1, a2, out_act;

  void init(RngStream& rng) {
    c1.init(rng);
    c2.init(rng);
    res.init(rng);
    head.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& f_hat, const Tensor<S>& z_hat, const Tensor<S>& t_norm) {
    const int n = f_hat.dim(0);
    if (f_hat.numel() != static_cast<std::int64_t>(n) * 192 || z_hat.numel() != f_hat.numel())
      throw std::invalid_argument("CifarClassifier: feature width mismatch");
    Tensor<S> in({n, 6, 8, 9});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 6; ++c) {
        const S* src = (c < 3 ? f_hat.ptr() + static_cast<std::int64_t>(i) * 192 + c * 64
                              : z_hat.ptr() + static_cast<std::int64_t>(i) * 192 + (c - 3) * 64);
        S* dst = in.ptr() + (static_cast<std::int64_t>(i) * 6 + c) * 72;
        for (int y = 0; y < 8; ++y) {
          std::memcpy(dst + y * 9, src + y * 8, 8 * sizeof(S));
          dst[y * 9 + 8] = t_norm[i];
        }
      }
    Tensor<S> h = a1.forward(c1.forward(in));
    if (h.dim(1) != 64 || h.dim(2) != 8 || h.dim(3) != 8)
      throw std::logic_error("CifarClassifier: stage-1 shape");
    h = res.forward(a2.forward(c2.forward(h)));
    if (h.dim(1) != 512 || h.dim(2) != 4) throw std::logic_error("CifarClassifier: stage-2 shape");
    h = pool.forward(h);
    const int nb = h.dim(0);
    return out_act.forward(head.forward(h.reshaped({nb, 512})));
  }

  void backward(const Tensor<S>& dscores, Tensor<S>& df_hat, Tensor<S>& dz_hat) {
    const int n = dscores.dim(0);
    Tensor<S> d = head.backward(out_act.backward(dscores)).reshaped({n, 512, 1, 1});
    d = c2.backward(a2.backward(res.backward(pool.backward(d))));
    Tensor<S> din = c1.backward(a1.backward(d));
    df_hat = Tensor<S>({n, 192});
    dz_hat = Tensor<S>({n, 192});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 6; ++c) {
        S* dst = (c < 3 ? df_hat.ptr() + static_cast<std::int64_t>(i) * 192 + c * 64
                        : dz_hat.ptr() + static_cast<std::int64_t>(i) * 192 + (c - 3) * 64);
        const S* src = din.ptr() + (static_cast<std::int64_t>(i) * 6 + c) * 72;
        for (int y = 0; y < 8; ++y)
          std::memcpy(dst + y * 8, src + y * 9, 8 * sizeof(S));
      }
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    c1.collect(ps, prefix + ".c1");
    c2.collect(ps, prefix + ".c2");
    res.collect(ps, prefix + ".res");
    head.collect(ps, prefix + ".head");
  }
};

template <typename S>
struct CifarStrongClassifier {
  nn::Conv2d<S> c1{3, 64, 3, 1, 1};
  nn::Conv2d<S> c2{64, 256, 3, 2, 1};
  ResidualConvBlock<S> res{256, 512, 2};
  nn::AdaptiveAvgPool2d<S> pool{2, 2};
  nn::Linear<S> l1{2048, 256};
  nn::Linear<S> l2{256, 10};
  nn::ReLU<S> a1, a2, a3;

  void init(RngStream& rng) {
    c1.init(rng);
    c2.init(rng);
    res.init(rng);
    l1.init(rng);
    l2.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != 32 || x.dim(3) != 32)
      throw std::invalid_argument("CifarStrongClassifier: expected [n,3,32,32]");
    Tensor<S> h = a1.forward(c1.forward(x));
    h = a2.forward(c2.forward(h));
    if (h.dim(1) != 256 || h.dim(2) != 16) throw std::logic_error("CifarStrong: stage-2 shape");
    h = res.forward(h);
    if (h.dim(1) != 512 || h.dim(2) != 8) throw std::logic_error("CifarStrong: residual shape");
    h = pool.forward(h);
    const int n = h.dim(0);
    return l2.forward(a3.forward(l1.forward(h.reshaped({n, 2048}))));
  }

  Tensor<S> backward(const Tensor<S>& dlogits) {
    const int n = dlogits.dim(0);
    Tensor<S> d = l1.backward(a3.backward(l2.backward(dlogits))).reshaped({n, 512, 2, 2});
    d = res.backward(pool.backward(d));
    d = c2.backward(a2.backward(d));
    return c1.backward(a1.backward(d));
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    c1.collect(ps, prefix + ".c1");
    c2.collect(ps, prefix + ".c2");
    res.collect(ps, prefix + ".res");
    l1.collect(ps, prefix + ".l1");
    l2.collect(ps, prefix + ".l2");
  }
};

template <typename S>
struct CifarAdversary {
  nn::Conv2d<S> c1{3, 512, 3, 1, 1};
  nn::ConvTranspose2d<S> up1{512, 128, 2, 2};
  ResidualConvBlock<S> res1{128, 128};
  nn::ConvTranspose2d<S> up2{128, 128, 2, 2};
  ResidualConvBlock<S> res2{128, 128};
  nn::Conv2d<S> c2{128, 3, 3, 1, 1};
  nn::Tanh<S> a1, a2, a3, a4;

  void init(RngStream& rng) {
    c1.init(rng);
    up1.init(rng);
    res1.init(rng);
    up2.init(rng);
    res2.init(rng);
    c2.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& z_hat) {
    const int n = z_hat.dim(0);
    if (z_hat.numel() != static_cast<std::int64_t>(n) * 192)
      throw std::invalid_argument("CifarAdversary: expected length-192 features");
    Tensor<S> h = a1.forward(c1.forward(z_hat.reshaped({n, 3, 8, 8})));
    if (h.dim(1) != 512 || h.dim(2) != 8) throw std::logic_error("CifarAdversary: stage-1 shape");
    h = res1.forward(a2.forward(up1.forward(h)));
    if (h.dim(1) != 128 || h.dim(2) != 16) throw std::logic_error("CifarAdversary: stage-2 shape");
    h = res2.forward(a3.forward(up2.forward(h)));
    if (h.dim(1) != 128 || h.dim(2) != 32) throw std::logic_error("CifarAdversary: stage-3 shape");
    return a4.forward(c2.forward(h));
  }

  Tensor<S> backward(const Tensor<S>& dimg) {
    Tensor<S> d = c2.backward(a4.backward(dimg));
    d = up2.backward(a3.backward(res2.backward(d)));
    d = up1.backward(a2.backward(res1.backward(d)));
    d = c1.backward(a1.backward(d));
    const int n = d.dim(0);
    return d.reshaped({n, 192});
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    c1.collect(ps, prefix + ".c1");
    up1.collect(ps, prefix + ".up1");
    res1.collect(ps, prefix + ".res1");
    up2.collect(ps, prefix + ".up2");
    res2.collect(ps, prefix + ".res2");
    c2.collect(ps, prefix + ".c2");
  }
};

}  // namespace diffsem
