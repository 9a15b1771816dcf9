#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffsem/gemm.hpp"
#include "diffsem/rng.hpp"
#include "diffsem/tensor.hpp"

namespace diffsem::nn {

using diffsem::RngStream;
using diffsem::Tensor;

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S>* value;
  Tensor<S>* grad;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
void init_fan_in(Tensor<S>& w, Tensor<S>& b, int fan_in, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  rng.fill_uniform(w, -bound, bound);
  rng.fill_uniform(b, -bound, bound);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename S>
struct Linear {
  int in = 0, out = 0;
  Tensor<S> w, b, gw, gb;
  Tensor<S> x_;  // cached input

  Linear() = default;
  Linear(int in_dim, int out_dim) : in(in_dim), out(out_dim) {
    w = Tensor<S>({out, in});
    b = Tensor<S>({out});
    gw = Tensor<S>({out, in});
    gb = Tensor<S>({out});
  }

  void init(RngStream& rng) { init_fan_in(w, b, in, rng); }

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.dim(0);
    if (x.numel() != static_cast<std::int64_t>(n) * in)
      throw std::invalid_argument("Linear: input width mismatch");
    x_ = x;
    Tensor<S> y({n, out});
    gemm<S>(false, true, n, out, in, S(1), x.ptr(), in, w.ptr(), in, S(0), y.ptr(), out);
    for (int i = 0; i < n; ++i) {
      S* row = y.ptr() + static_cast<std::int64_t>(i) * out;
      for (int j = 0; j < out; ++j) row[j] += b[j];
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = dy.dim(0);
    gemm<S>(true, false, out, in, n, S(1), dy.ptr(), out, x_.ptr(), in, S(1), gw.ptr(), in);
    for (int i = 0; i < n; ++i) {
      const S* row = dy.ptr() + static_cast<std::int64_t>(i) * out;
      for (int j = 0; j < out; ++j) gb[j] += row[j];
    }
    Tensor<S> dx({n, in});
    gemm<S>(false, false, n, in, out, S(1), dy.ptr(), out, w.ptr(), in, S(0), dx.ptr(), in);
    return dx;
  }

  void collect(ParamList<S>& ps, const std::string& prefix) {
    ps.push_back({prefix + ".w", &w, &gw});
    ps.push_back({prefix + ".b", &b, &gb});
  }
};

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

struct ConvGeom {
  int c, h, w;          // input extents
  int kh, kw, sh, sw;   // kernel, stride
  int pt, pb, pl, pr;   // padding: top/bottom/left/right
  int oh() const { return (h + pt + pb - kh) / sh + 1; }
  int ow() const { return (w + pl + pr - kw) / sw + 1; }
};

/// dst is [c*kh*kw, n*oh*ow], column index = (n*oh + y)*ow + x.
template <typename S>
void im2col(const Tensor<S>& src, const ConvGeom& g, Tensor<S>& dst) {
  const int n = src.dim(0), oh = g.oh(), ow = g.ow();
  const std::int64_t cols = static_cast<std::int64_t>(n) * oh * ow;
  dst.shape = {g.c * g.kh * g.kw, static_cast<int>(cols)};
  dst.data.assign(static_cast<size_t>(g.c * g.kh * g.kw * cols), S(0));
  const std::int64_t plane = static_cast<std::int64_t>(g.h) * g.w;
  const std::int64_t sample = plane * g.c;
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        S* drow = dst.ptr() + (static_cast<std::int64_t>(c) * g.kh * g.kw + ki * g.kw + kj) * cols;
        for (int b = 0; b < n; ++b) {
          const S* splane = src.ptr() + b * sample + c * plane;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * g.sh - g.pt + ki;
            S* d = drow + (static_cast<std::int64_t>(b) * oh + y) * ow;
            if (iy < 0 || iy >= g.h) continue;  // stays zero
            const S* srow = splane + static_cast<std::int64_t>(iy) * g.w;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * g.sw - g.pl + kj;
              if (ix >= 0 && ix < g.w) d[x] = srow[ix];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds columns back into an [n, c, h, w] tensor.
template <typename S>
void col2im_add(const Tensor<S>& cols, const ConvGeom& g, Tensor<S>& dst) {
  const int n = dst.dim(0), oh = g.oh(), ow = g.ow();
  const std::int64_t ncols = static_cast<std::int64_t>(n) * oh * ow;
  const std::int64_t plane = static_cast<std::int64_t>(g.h) * g.w;
  const std::int64_t sample = plane * g.c;
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const S* srow = cols.ptr() + (static_cast<std::int64_t>(c) * g.kh * g.kw + ki * g.kw + kj) * ncols;
        for (int b = 0; b < n; ++b) {
          S* dplane = dst.ptr() + b * sample + c * plane;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * g.sh - g.pt + ki;
            if (iy < 0 || iy >= g.h) continue;
            const S* s = srow + (static_cast<std::int64_t>(b) * oh + y) * ow;
            S* drow = dplane + static_cast<std::int64_t>(iy) * g.w;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * g.sw - g.pl + kj;
              if (ix >= 0 && ix < g.w) drow[ix] += s[x];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2d {
  int in_c = 0, out_c = 0;
  ConvGeom geom{};
  Tensor<S> w, b, gw, gb;  // w is [out_c, in_c*kh*kw]
  Tensor<S> x_;

  Conv2d() = default;
  Conv2d(int ic, int oc, int k, int stride, int pad)
      : Conv2d(ic, oc, k, stride, pad, pad, pad, pad) {}
  Conv2d(int ic, int oc, int k, int stride, int pt, int pb, int pl, int pr)
      : in_c(ic), out_c(oc) {
    geom = ConvGeom{ic, 0, 0, k, k, stride, stride, pt, pb, pl, pr};
    const int kk = ic * k * k;
    w = Tensor<S>({oc, kk});
    b = Tensor<S>({oc});
    gw = Tensor<S>({oc, kk});
    gb = Tensor<S>({oc});
  }

  void init(RngStream& rng) { init_fan_in(w, b, in_c * geom.kh * geom.kw, rng); }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.ndim() != 4 || x.dim(1) != in_c) throw std::invalid_argument("Conv2d: bad input shape");
    geom.h = x.dim(2);
    geom.w = x.dim(3);
    x_ = x;
    const int n = x.dim(0), oh = geom.oh(), ow = geom.ow();
    Tensor<S> cols;
    im2col(x, geom, cols);
    const int k = cols.dim(0);
    const int ncols = cols.dim(1);
    Tensor<S> y({out_c, ncols});
    gemm<S>(false, false, out_c, ncols, k, S(1), w.ptr(), k, cols.ptr(), ncols, S(0), y.ptr(), ncols);
    Tensor<S> out({n, out_c, oh, ow});
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;
    for (int oc = 0; oc < out_c; ++oc) {
      const S* yrow = y.ptr() + static_cast<std::int64_t>(oc) * ncols;
      for (int bi = 0; bi < n; ++bi) {
        S* dst = out.ptr() + (static_cast<std::int64_t>(bi) * out_c + oc) * plane;
        const S* src = yrow + static_cast<std::int64_t>(bi) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] + b[oc];
      }
    }
    return out;
  }

  Tensor<S> backward(const Tensor<S>& dout) {
    const int n = dout.dim(0), oh = geom.oh(), ow = geom.ow();
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;
    const std::int64_t ncols = static_cast<std::int64_t>(n) * plane;
    // Gather dout into [out_c, n*oh*ow] and accumulate bias grads.
    Tensor<S> dy({out_c, static_cast<int>(ncols)});
    for (int oc = 0; oc < out_c; ++oc) {
      S* drow = dy.ptr() + static_cast<std::int64_t>(oc) * ncols;
      double bsum = 0.0;
      for (int bi = 0; bi < n; ++bi) {
        const S* src = dout.ptr() + (static_cast<std::int64_t>(bi) * out_c + oc) * plane;
        S* dst = drow + static_cast<std::int64_t>(bi) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          dst[i] = src[i];
          bsum += static_cast<double>(src[i]);
        }
      }
      gb[oc] += static_cast<S>(bsum);
    }
    Tensor<S> cols;
    im2col(x_, geom, cols);
    const int k = cols.dim(0);
    gemm<S>(false, true, out_c, k, static_cast<int>(ncols), S(1), dy.ptr(), static_cast<int>(ncols),
            cols.ptr(), static_cast<int>(ncols), S(1), gw.ptr(), k);
    Tensor<S> dcols({k, static_cast<int>(ncols)});
    gemm<S>(true, false, k, static_cast<int>(ncols), out_c, S(1), w.ptr(), k, dy.ptr(),
            static_cast<int>(ncols), S(0), dcols.ptr(), static_cast<int>(ncols));
    Tensor<S> dx(x_.shape);
    col2im_add(dcols, geom, dx);
    return dx;
  }

  void collect(ParamList<S>& ps, const std::string& prefix) {
    ps.push_back({prefix + ".w", &w, &gw});
    ps.push_back({prefix + ".b", &b, &gb});
  }
};

// ---------------------------------------------------------------------------
// ConvTranspose2d (adjoint of a strided conv; w is [in_c, out_c*kh*kw])
// ---------------------------------------------------------------------------

template <typename S>
struct ConvTranspose2d {
  int in_c = 0, out_c = 0;
  ConvGeom geom{};  // geometry of the adjoint conv: out image -> in image
  Tensor<S> w, b, gw, gb;
  Tensor<S> x_;

  ConvTranspose2d() = default;
  ConvTranspose2d(int ic, int oc, int k, int stride, int pad = 0) : in_c(ic), out_c(oc) {
    geom = ConvGeom{oc, 0, 0, k, k, stride, stride, pad, pad, pad, pad};
    const int kk = oc * k * k;
    w = Tensor<S>({ic, kk});
    b = Tensor<S>({oc});
    gw = Tensor<S>({ic, kk});
    gb = Tensor<S>({oc});
  }

  void init(RngStream& rng) { init_fan_in(w, b, in_c * geom.kh * geom.kw, rng); }

  int out_h(int ih) const { return (ih - 1) * geom.sh + geom.kh - geom.pt - geom.pb; }
  int out_w(int iw) const { return (iw - 1) * geom.sw + geom.kw - geom.pl - geom.pr; }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.ndim() != 4 || x.dim(1) != in_c) throw std::invalid_argument("ConvTranspose2d: bad input shape");
    const int n = x.dim(0), ih = x.dim(2), iw = x.dim(3);
    const int oh = out_h(ih), ow = out_w(iw);
    geom.h = oh;
    geom.w = ow;
    x_ = x;
    // Gather x into [in_c, n*ih*iw].
    const std::int64_t plane = static_cast<std::int64_t>(ih) * iw;
    const std::int64_t ncols = static_cast<std::int64_t>(n) * plane;
    Tensor<S> xf({in_c, static_cast<int>(ncols)});
    for (int c = 0; c < in_c; ++c) {
      S* drow = xf.ptr() + static_cast<std::int64_t>(c) * ncols;
      for (int bi = 0; bi < n; ++bi)
        std::memcpy(drow + bi * plane, x.ptr() + (static_cast<std::int64_t>(bi) * in_c + c) * plane,
                    sizeof(S) * static_cast<size_t>(plane));
    }
    const int k = out_c * geom.kh * geom.kw;
    Tensor<S> cols({k, static_cast<int>(ncols)});
    gemm<S>(true, false, k, static_cast<int>(ncols), in_c, S(1), w.ptr(), k, xf.ptr(),
            static_cast<int>(ncols), S(0), cols.ptr(), static_cast<int>(ncols));
    Tensor<S> out({n, out_c, oh, ow});
    out.zero();
    col2im_add(cols, geom, out);
    const std::int64_t oplane = static_cast<std::int64_t>(oh) * ow;
    for (int bi = 0; bi < n; ++bi)
      for (int oc = 0; oc < out_c; ++oc) {
        S* p = out.ptr() + (static_cast<std::int64_t>(bi) * out_c + oc) * oplane;
        for (std::int64_t i = 0; i < oplane; ++i) p[i] += b[oc];
      }
    return out;
  }

  Tensor<S> backward(const Tensor<S>& dout) {
    const int n = dout.dim(0);
    const int ih = x_.dim(2), iw = x_.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(ih) * iw;
    const std::int64_t ncols = static_cast<std::int64_t>(n) * plane;
    Tensor<S> dcols;
    im2col(dout, geom, dcols);  // [out_c*kh*kw, n*ih*iw]
    const int k = dcols.dim(0);
    // dX = W * dcols, then scatter back to [n, in_c, ih, iw].
    Tensor<S> dxf({in_c, static_cast<int>(ncols)});
    gemm<S>(false, false, in_c, static_cast<int>(ncols), k, S(1), w.ptr(), k, dcols.ptr(),
            static_cast<int>(ncols), S(0), dxf.ptr(), static_cast<int>(ncols));
    Tensor<S> dx(x_.shape);
    for (int c = 0; c < in_c; ++c) {
      const S* srow = dxf.ptr() + static_cast<std::int64_t>(c) * ncols;
      for (int bi = 0; bi < n; ++bi)
        std::memcpy(dx.ptr() + (static_cast<std::int64_t>(bi) * in_c + c) * plane, srow + bi * plane,
                    sizeof(S) * static_cast<size_t>(plane));
    }
    // dW = Xflat * dcols^T.
    Tensor<S> xf({in_c, static_cast<int>(ncols)});
    for (int c = 0; c < in_c; ++c) {
      S* drow = xf.ptr() + static_cast<std::int64_t>(c) * ncols;
      for (int bi = 0; bi < n; ++bi)
        std::memcpy(drow + bi * plane, x_.ptr() + (static_cast<std::int64_t>(bi) * in_c + c) * plane,
                    sizeof(S) * static_cast<size_t>(plane));
    }
    gemm<S>(false, true, in_c, k, static_cast<int>(ncols), S(1), xf.ptr(), static_cast<int>(ncols),
            dcols.ptr(), static_cast<int>(ncols), S(1), gw.ptr(), k);
    const int oh = dout.dim(2), ow = dout.dim(3);
    const std::int64_t oplane = static_cast<std::int64_t>(oh) * ow;
    for (int oc = 0; oc < out_c; ++oc) {
      double bsum = 0.0;
      for (int bi = 0; bi < n; ++bi) {
        const S* p = dout.ptr() + (static_cast<std::int64_t>(bi) * out_c + oc) * oplane;
        for (std::int64_t i = 0; i < oplane; ++i) bsum += static_cast<double>(p[i]);
      }
      gb[oc] += static_cast<S>(bsum);
    }
    return dx;
  }

  void collect(ParamList<S>& ps, const std::string& prefix) {
    ps.push_back({prefix + ".w", &w, &gw});
    ps.push_back({prefix + ".b", &b, &gb});
  }
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename S>
struct ReLU {
  Tensor<S> x_;
  Tensor<S> forward(const Tensor<S>& x) {
    x_ = x;
    Tensor<S> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > S(0) ? x[i] : S(0);
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] = x_[i] > S(0) ? dy[i] : S(0);
    return dx;
  }
};

template <typename S>
struct LeakyReLU {
  S slope = S(0.01);
  Tensor<S> x_;
  Tensor<S> forward(const Tensor<S>& x) {
    x_ = x;
    Tensor<S> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > S(0) ? x[i] : slope * x[i];
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] = x_[i] > S(0) ? dy[i] : slope * dy[i];
    return dx;
  }
};

template <typename S>
struct Tanh {
  Tensor<S> y_;
  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = static_cast<S>(std::tanh(static_cast<double>(x[i])));
    y_ = y;
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * (S(1) - y_[i] * y_[i]);
    return dx;
  }
};

template <typename S>
struct Sigmoid {
  Tensor<S> y_;
  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i)
      y[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    y_ = y;
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * y_[i] * (S(1) - y_[i]);
    return dx;
  }
};

template <typename S>
struct GELU {
  Tensor<S> x_;
  static double phi(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }
  static double pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
  Tensor<S> forward(const Tensor<S>& x) {
    x_ = x;
    Tensor<S> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const double v = static_cast<double>(x[i]);
      y[i] = static_cast<S>(v * phi(v));
    }
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    for (std::int64_t i = 0; i < dy.numel(); ++i) {
      const double v = static_cast<double>(x_[i]);
      dx[i] = dy[i] * static_cast<S>(phi(v) + v * pdf(v));
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// LayerNorm over all trailing dims of each sample, with per-feature affine.
template <typename S>
struct LayerNorm {
  int feat = 0;
  double eps = 1e-5;
  Tensor<S> gamma, beta, ggamma, gbeta;
  Tensor<S> xhat_;
  std::vector<double> inv_std_;

  LayerNorm() = default;
  explicit LayerNorm(int features) : feat(features) {
    gamma = Tensor<S>({feat}, S(1));
    beta = Tensor<S>({feat}, S(0));
    ggamma = Tensor<S>({feat});
    gbeta = Tensor<S>({feat});
  }

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.dim(0);
    if (x.numel() != static_cast<std::int64_t>(n) * feat)
      throw std::invalid_argument("LayerNorm: feature count mismatch");
    xhat_ = Tensor<S>(x.shape);
    inv_std_.assign(static_cast<size_t>(n), 0.0);
    Tensor<S> y(x.shape);
    for (int i = 0; i < n; ++i) {
      const S* px = x.ptr() + static_cast<std::int64_t>(i) * feat;
      double mu = 0.0;
      for (int j = 0; j < feat; ++j) mu += static_cast<double>(px[j]);
      mu /= feat;
      double var = 0.0;
      for (int j = 0; j < feat; ++j) {
        const double d = static_cast<double>(px[j]) - mu;
        var += d * d;
      }
      var /= feat;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std_[static_cast<size_t>(i)] = is;
      S* ph = xhat_.ptr() + static_cast<std::int64_t>(i) * feat;
      S* py = y.ptr() + static_cast<std::int64_t>(i) * feat;
      for (int j = 0; j < feat; ++j) {
        ph[j] = static_cast<S>((static_cast<double>(px[j]) - mu) * is);
        py[j] = gamma[j] * ph[j] + beta[j];
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = dy.dim(0);
    Tensor<S> dx(dy.shape);
    for (int i = 0; i < n; ++i) {
      const S* pdy = dy.ptr() + static_cast<std::int64_t>(i) * feat;
      const S* ph = xhat_.ptr() + static_cast<std::int64_t>(i) * feat;
      double m1 = 0.0, m2 = 0.0;
      for (int j = 0; j < feat; ++j) {
        const double g = static_cast<double>(pdy[j]) * static_cast<double>(gamma[j]);
        m1 += g;
        m2 += g * static_cast<double>(ph[j]);
      }
      m1 /= feat;
      m2 /= feat;
      const double is = inv_std_[static_cast<size_t>(i)];
      S* pdx = dx.ptr() + static_cast<std::int64_t>(i) * feat;
      for (int j = 0; j < feat; ++j) {
        const double g = static_cast<double>(pdy[j]) * static_cast<double>(gamma[j]);
        pdx[j] = static_cast<S>((g - m1 - static_cast<double>(ph[j]) * m2) * is);
        ggamma[j] += pdy[j] * ph[j];
        gbeta[j] += pdy[j];
      }
    }
    return dx;
  }

  void collect(ParamList<S>& ps, const std::string& prefix) {
    ps.push_back({prefix + ".gamma", &gamma, &ggamma});
    ps.push_back({prefix + ".beta", &beta, &gbeta});
  }
};

/// GroupNorm over [n, c, h, w] with per-channel affine.
template <typename S>
struct GroupNorm {
  int channels = 0, groups = 8;
  double eps = 1e-5;
  Tensor<S> gamma, beta, ggamma, gbeta;
  Tensor<S> xhat_;
  std::vector<double> inv_std_;

  GroupNorm() = default;
  GroupNorm(int c, int g = 8) : channels(c), groups(g) {
    if (c % g != 0) throw std::invalid_argument("GroupNorm: channels not divisible by groups");
    gamma = Tensor<S>({c}, S(1));
    beta = Tensor<S>({c}, S(0));
    ggamma = Tensor<S>({c});
    gbeta = Tensor<S>({c});
  }

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != channels) throw std::invalid_argument("GroupNorm: channel mismatch");
    const int cpg = c / groups;
    const std::int64_t gsize = static_cast<std::int64_t>(cpg) * h * w;
    xhat_ = Tensor<S>(x.shape);
    inv_std_.assign(static_cast<size_t>(n) * groups, 0.0);
    Tensor<S> y(x.shape);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int bi = 0; bi < n; ++bi) {
      for (int g = 0; g < groups; ++g) {
        const S* px = x.ptr() + (static_cast<std::int64_t>(bi) * c + g * cpg) * plane;
        double mu = 0.0;
        for (std::int64_t i = 0; i < gsize; ++i) mu += static_cast<double>(px[i]);
        mu /= static_cast<double>(gsize);
        double var = 0.0;
        for (std::int64_t i = 0; i < gsize; ++i) {
          const double d = static_cast<double>(px[i]) - mu;
          var += d * d;
        }
        var /= static_cast<double>(gsize);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std_[static_cast<size_t>(bi) * groups + g] = is;
        S* ph = xhat_.ptr() + (static_cast<std::int64_t>(bi) * c + g * cpg) * plane;
        S* py = y.ptr() + (static_cast<std::int64_t>(bi) * c + g * cpg) * plane;
        for (int cc = 0; cc < cpg; ++cc) {
          const S gam = gamma[g * cpg + cc];
          const S bet = beta[g * cpg + cc];
          for (std::int64_t i = 0; i < plane; ++i) {
            const std::int64_t idx = cc * plane + i;
            ph[idx] = static_cast<S>((static_cast<double>(px[idx]) - mu) * is);
            py[idx] = gam * ph[idx] + bet;
          }
        }
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
    const int cpg = c / groups;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t gsize = static_cast<std::int64_t>(cpg) * plane;
    Tensor<S> dx(dy.shape);
    for (int bi = 0; bi < n; ++bi) {
      for (int g = 0; g < groups; ++g) {
        const std::int64_t base = (static_cast<std::int64_t>(bi) * c + g * cpg) * plane;
        const S* pdy = dy.ptr() + base;
        const S* ph = xhat_.ptr() + base;
        double m1 = 0.0, m2 = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const double gam = static_cast<double>(gamma[g * cpg + cc]);
          for (std::int64_t i = 0; i < plane; ++i) {
            const double gv = static_cast<double>(pdy[cc * plane + i]) * gam;
            m1 += gv;
            m2 += gv * static_cast<double>(ph[cc * plane + i]);
          }
        }
        m1 /= static_cast<double>(gsize);
        m2 /= static_cast<double>(gsize);
        const double is = inv_std_[static_cast<size_t>(bi) * groups + g];
        S* pdx = dx.ptr() + base;
        for (int cc = 0; cc < cpg; ++cc) {
          const double gam = static_cast<double>(gamma[g * cpg + cc]);
          double sg = 0.0, sb = 0.0;
          for (std::int64_t i = 0; i < plane; ++i) {
            const std::int64_t idx = cc * plane + i;
            const double gv = static_cast<double>(pdy[idx]) * gam;
            pdx[idx] = static_cast<S>((gv - m1 - static_cast<double>(ph[idx]) * m2) * is);
            sg += static_cast<double>(pdy[idx]) * static_cast<double>(ph[idx]);
            sb += static_cast<double>(pdy[idx]);
          }
          ggamma[g * cpg + cc] += static_cast<S>(sg);
          gbeta[g * cpg + cc] += static_cast<S>(sb);
        }
      }
    }
    return dx;
  }

  void collect(ParamList<S>& ps, const std::string& prefix) {
    ps.push_back({prefix + ".gamma", &gamma, &ggamma});
    ps.push_back({prefix + ".beta", &beta, &gbeta});
  }
};

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename S>
struct MaxPool2d {
  int k = 2;
  std::vector<std::int64_t> argmax_;
  std::vector<int> in_shape_;

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h / k, ow = w / k;
    in_shape_ = x.shape;
    Tensor<S> y({n, c, oh, ow});
    argmax_.assign(static_cast<size_t>(y.numel()), 0);
    std::int64_t oi = 0;
    for (int bi = 0; bi < n; ++bi)
      for (int cc = 0; cc < c; ++cc) {
        const S* plane = x.ptr() + (static_cast<std::int64_t>(bi) * c + cc) * h * w;
        for (int y0 = 0; y0 < oh; ++y0)
          for (int x0 = 0; x0 < ow; ++x0, ++oi) {
            S best = plane[(y0 * k) * w + x0 * k];
            std::int64_t bidx = (y0 * k) * w + x0 * k;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                const std::int64_t idx = (y0 * k + dy) * w + (x0 * k + dx);
                if (plane[idx] > best) {
                  best = plane[idx];
                  bidx = idx;
                }
              }
            y[oi] = best;
            argmax_[static_cast<size_t>(oi)] =
                (static_cast<std::int64_t>(bi) * c + cc) * h * w + bidx;
          }
      }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(in_shape_);
    dx.zero();
    for (std::int64_t i = 0; i < dy.numel(); ++i) dx[argmax_[static_cast<size_t>(i)]] += dy[i];
    return dx;
  }
};

/// Average pooling onto a fixed output grid (input extents must divide evenly).
template <typename S>
struct AdaptiveAvgPool2d {
  int oh = 1, ow = 1;
  std::vector<int> in_shape_;

  AdaptiveAvgPool2d() = default;
  AdaptiveAvgPool2d(int out_h, int out_w) : oh(out_h), ow(out_w) {}

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % oh != 0 || w % ow != 0)
      throw std::invalid_argument("AdaptiveAvgPool2d: extents must divide evenly");
    in_shape_ = x.shape;
    const int ky = h / oh, kx = w / ow;
    Tensor<S> y({n, c, oh, ow});
    std::int64_t oi = 0;
    for (int bi = 0; bi < n; ++bi)
      for (int cc = 0; cc < c; ++cc) {
        const S* plane = x.ptr() + (static_cast<std::int64_t>(bi) * c + cc) * h * w;
        for (int y0 = 0; y0 < oh; ++y0)
          for (int x0 = 0; x0 < ow; ++x0, ++oi) {
            double acc = 0.0;
            for (int dy = 0; dy < ky; ++dy)
              for (int dx = 0; dx < kx; ++dx)
                acc += static_cast<double>(plane[(y0 * ky + dy) * w + (x0 * kx + dx)]);
            y[oi] = static_cast<S>(acc / (ky * kx));
          }
      }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const int ky = h / oh, kx = w / ow;
    Tensor<S> dx(in_shape_);
    dx.zero();
    std::int64_t oi = 0;
    const S inv = S(1) / static_cast<S>(ky * kx);
    for (int bi = 0; bi < n; ++bi)
      for (int cc = 0; cc < c; ++cc) {
        S* plane = dx.ptr() + (static_cast<std::int64_t>(bi) * c + cc) * h * w;
        for (int y0 = 0; y0 < oh; ++y0)
          for (int x0 = 0; x0 < ow; ++x0, ++oi)
            for (int dy2 = 0; dy2 < ky; ++dy2)
              for (int dx2 = 0; dx2 < kx; ++dx2)
                plane[(y0 * ky + dy2) * w + (x0 * kx + dx2)] += dy[oi] * inv;
      }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Power normalization with gradients (used inside the stage-1 graph)
// ---------------------------------------------------------------------------

template <typename S>
struct PowerNorm {
  Tensor<S> x_;
  std::vector<double> scale_, energy_;

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.dim(0);
    const std::int64_t k = x.numel() / n;
    x_ = x;
    scale_.assign(static_cast<size_t>(n), 0.0);
    energy_.assign(static_cast<size_t>(n), 0.0);
    Tensor<S> y(x.shape);
    for (int i = 0; i < n; ++i) {
      const double e = x.row_sum_sq(i);
      if (e == 0.0) throw std::invalid_argument("PowerNorm: all-zero feature");
      const double sc = std::sqrt(static_cast<double>(k) / e);
      scale_[static_cast<size_t>(i)] = sc;
      energy_[static_cast<size_t>(i)] = e;
      const S* px = x.ptr() + k * i;
      S* py = y.ptr() + k * i;
      for (std::int64_t j = 0; j < k; ++j) py[j] = static_cast<S>(px[j] * sc);
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = dy.dim(0);
    const std::int64_t k = dy.numel() / n;
    Tensor<S> dx(dy.shape);
    for (int i = 0; i < n; ++i) {
      const S* px = x_.ptr() + k * i;
      const S* pdy = dy.ptr() + k * i;
      S* pdx = dx.ptr() + k * i;
      double dot = 0.0;
      for (std::int64_t j = 0; j < k; ++j)
        dot += static_cast<double>(pdy[j]) * static_cast<double>(px[j]);
      const double sc = scale_[static_cast<size_t>(i)];
      const double e = energy_[static_cast<size_t>(i)];
      for (std::int64_t j = 0; j < k; ++j)
        pdx[j] = static_cast<S>(sc * (static_cast<double>(pdy[j]) -
                                      static_cast<double>(px[j]) * dot / e));
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor<S> p(logits.shape);
  for (int i = 0; i < n; ++i) {
    const S* pl = logits.ptr() + static_cast<std::int64_t>(i) * c;
    S* pp = p.ptr() + static_cast<std::int64_t>(i) * c;
    double mx = -1e300;
    for (int j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(pl[j]));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(pl[j]) - mx);
    for (int j = 0; j < c; ++j)
      pp[j] = static_cast<S>(std::exp(static_cast<double>(pl[j]) - mx) / z);
  }
  return p;
}

/// Lowest-index argmax per row (deterministic tie-break).
template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& scores) {
  const int n = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const S* p = scores.ptr() + static_cast<std::int64_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (p[j] > p[best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

/// Mean cross-entropy over softmax probabilities; returns loss and fills
/// dlogits with the gradient (already divided by the batch size).
template <typename S>
double softmax_ce(const Tensor<S>& logits, const std::vector<int>& labels, Tensor<S>& dlogits) {
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor<S> p = softmax(logits);
  dlogits = p;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    const double q = std::max(static_cast<double>(p[static_cast<std::int64_t>(i) * c + y]), 1e-30);
    loss -= std::log(q);
    dlogits[static_cast<std::int64_t>(i) * c + y] -= S(1);
  }
  const S inv = S(1) / static_cast<S>(n);
  for (std::int64_t i = 0; i < dlogits.numel(); ++i) dlogits[i] *= inv;
  return loss / n;
}

/// Mean squared error per element; fills dpred with the gradient.
template <typename S>
double mse_loss(const Tensor<S>& pred, const Tensor<S>& target, Tensor<S>& dpred) {
  if (pred.shape != target.shape) throw std::invalid_argument("mse_loss: shape mismatch");
  dpred = Tensor<S>(pred.shape);
  double loss = 0.0;
  const double inv = 2.0 / static_cast<double>(pred.numel());
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    loss += d * d;
    dpred[i] = static_cast<S>(d * inv);
  }
  return loss / static_cast<double>(pred.numel());
}

}  // namespace diffsem::nn
