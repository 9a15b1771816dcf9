#pragma once

#include "diffsem/models/blocks.hpp"

namespace diffsem {

/// Noise-prediction U-Net over sqrt(k) x sqrt(k) feature maps.
///
/// The guided variant (width 128) takes a 10-class context vector alongside
/// the timestep; the unguided variant halves every width, drops the context
/// pathway, and keeps the bottleneck at 2x2 without pooling.
template <typename S>
struct UNet {
  bool guided = false;
  int in_c = 1;
  int feat = 128;
  int side = 8;

  ResidualConvBlock<S> init_block;
  nn::Conv2d<S> down1, down2;
  nn::GroupNorm<S> down1_norm, down2_norm;
  nn::GELU<S> down1_act, down2_act, vec_act;
  nn::AdaptiveAvgPool2d<S> pool{1, 1};
  EmbedFC<S> temb1, temb2, cemb1, cemb2;
  nn::ConvTranspose2d<S> up0, up1, up2;
  nn::GroupNorm<S> up0_norm;
  nn::ReLU<S> up0_act;
  ResidualConvBlock<S> up1_res, up2_res;
  nn::Conv2d<S> out1, out2;
  nn::GroupNorm<S> out_norm;
  nn::ReLU<S> out_act;

  // forward caches needed by backward
  Tensor<S> h0_, d1_, d2_, u1_, u1m_, ce2_map_;
  int batch_ = 0;

  UNet() = default;
  UNet(bool guided_variant, int in_channels, int width, int map_side = 8)
      : guided(guided_variant), in_c(in_channels), feat(width), side(map_side) {
    const int f = feat, f2 = 2 * feat;
    init_block = ResidualConvBlock<S>(in_c, f);
    down1 = nn::Conv2d<S>(f, f, 3, 2, 1);
    down1_norm = nn::GroupNorm<S>(f);
    down2 = nn::Conv2d<S>(f, f2, 3, 2, 1);
    down2_norm = nn::GroupNorm<S>(f2);
    temb1 = EmbedFC<S>(1, f2);
    temb2 = EmbedFC<S>(1, f);
    if (guided) {
      cemb1 = EmbedFC<S>(10, f2);
      cemb2 = EmbedFC<S>(10, f);
      up0 = nn::ConvTranspose2d<S>(3 * f2, f2, 2, 2);
    } else {
      up0 = nn::ConvTranspose2d<S>(2 * f2, f2, 3, 1, 1);
    }
    up0_norm = nn::GroupNorm<S>(f2);
    up1 = nn::ConvTranspose2d<S>(2 * f2, f, 2, 2);
    up1_res = ResidualConvBlock<S>(f, f);
    up2 = nn::ConvTranspose2d<S>(2 * f, f, 2, 2);
    up2_res = ResidualConvBlock<S>(f, f);
    out1 = nn::Conv2d<S>(2 * f, f, 3, 1, 1);
    out_norm = nn::GroupNorm<S>(f);
    out2 = nn::Conv2d<S>(f, in_c, 3, 1, 1);
    check_shapes();
  }

  void init(RngStream& rng) {
    init_block.init(rng);
    down1.init(rng);
    down2.init(rng);
    temb1.init(rng);
    temb2.init(rng);
    if (guided) {
      cemb1.init(rng);
      cemb2.init(rng);
    }
    up0.init(rng);
    up1.init(rng);
    up2.init(rng);
    up1_res.init(rng);
    up2_res.init(rng);
    out1.init(rng);
    out2.init(rng);
  }

  /// f_t is [n, k] flat; t_norm is [n] (t / T); ctx is [n, 10] for the guided
  /// variant and must be empty for the unguided one.
  Tensor<S> forward(const Tensor<S>& f_t, const Tensor<S>& t_norm, const Tensor<S>& ctx) {
    const int n = f_t.dim(0);
    if (f_t.numel() != static_cast<std::int64_t>(n) * in_c * side * side)
      throw std::invalid_argument("UNet: feature length mismatch");
    if (guided && (ctx.empty() || ctx.dim(0) != n || ctx.dim(1) != 10))
      throw std::invalid_argument("UNet: guided variant requires a [n,10] context");
    if (!guided && !ctx.empty())
      throw std::invalid_argument("UNet: context supplied to the unguided variant");
    batch_ = n;
    const int f = feat, f2 = 2 * feat;

    Tensor<S> x = f_t.reshaped({n, in_c, side, side});
    h0_ = init_block.forward(x);
    expect(h0_, {n, f, side, side});
    d1_ = down1_act.forward(down1_norm.forward(down1.forward(h0_)));
    expect(d1_, {n, f, side / 2, side / 2});
    d2_ = down2_act.forward(down2_norm.forward(down2.forward(d1_)));
    expect(d2_, {n, f2, side / 4, side / 4});

    Tensor<S> tcol = t_norm.reshaped({n, 1});
    Tensor<S> te1 = temb1.forward(tcol);  // [n, 2F]

    Tensor<S> bott;
    if (guided) {
      Tensor<S> vec = vec_act.forward(pool.forward(d2_));  // [n,2F,1,1]
      Tensor<S> ce1 = cemb1.forward(ctx);
      bott = cat_channels(cat_channels(vec, te1.reshaped({n, f2, 1, 1})),
                          ce1.reshaped({n, f2, 1, 1}));
      expect(bott, {n, 6 * f, 1, 1});
    } else {
      Tensor<S> vec = vec_act.forward(d2_);  // [n,2F,2,2]
      bott = cat_channels(vec, broadcast_map(te1, side / 4));
      expect(bott, {n, 4 * f, side / 4, side / 4});
    }

    Tensor<S> u0 = up0_act.forward(up0_norm.forward(up0.forward(bott)));
    expect(u0, {n, f2, side / 4, side / 4});
    u1_ = up1_res.forward(up1.forward(cat_channels(u0, d2_)));
    expect(u1_, {n, f, side / 2, side / 2});

    Tensor<S> te2 = temb2.forward(tcol);  // [n, F]
    if (guided) {
      Tensor<S> ce2 = cemb2.forward(ctx);
      ce2_map_ = broadcast_map(ce2, side / 2);
      u1m_ = Tensor<S>(u1_.shape);
      Tensor<S> te2m = broadcast_map(te2, side / 2);
      for (std::int64_t i = 0; i < u1_.numel(); ++i)
        u1m_[i] = ce2_map_[i] * u1_[i] + te2m[i];
    } else {
      Tensor<S> te2m = broadcast_map(te2, side / 2);
      u1m_ = Tensor<S>(u1_.shape);
      for (std::int64_t i = 0; i < u1_.numel(); ++i) u1m_[i] = u1_[i] + te2m[i];
    }

    Tensor<S> u2 = up2_res.forward(up2.forward(cat_channels(u1m_, d1_)));
    expect(u2, {n, f, side, side});
    Tensor<S> o1 = out_act.forward(out_norm.forward(out1.forward(cat_channels(u2, h0_))));
    Tensor<S> eps = out2.forward(o1);
    expect(eps, {n, in_c, side, side});
    return eps.reshaped({n, in_c * side * side});
  }

  /// Backpropagates d(loss)/d(eps); accumulates parameter gradients; returns
  /// the gradient with respect to f_t (flat [n, k]).
  Tensor<S> backward(const Tensor<S>& deps) {
    const int n = batch_;
    const int f = feat, f2 = 2 * feat;
    Tensor<S> d = deps.reshaped({n, in_c, side, side});
    d = out2.backward(d);
    d = out1.backward(out_norm.backward(out_act.backward(d)));
    Tensor<S> du2, dh0_skip;
    split_channels(d, f, du2, dh0_skip);
    d = up2.backward(up2_res.backward(du2));
    Tensor<S> du1m, dd1_skip;
    split_channels(d, f, du1m, dd1_skip);

    Tensor<S> du1(u1_.shape);
    Tensor<S> dte2_map(u1_.shape);
    if (guided) {
      Tensor<S> dce2_map(u1_.shape);
      for (std::int64_t i = 0; i < du1m.numel(); ++i) {
        du1[i] = du1m[i] * ce2_map_[i];
        dce2_map[i] = du1m[i] * u1_[i];
        dte2_map[i] = du1m[i];
      }
      cemb2.backward(reduce_map(dce2_map));
    } else {
      du1 = du1m;
      dte2_map = du1m;
    }
    temb2.backward(reduce_map(dte2_map));

    d = up1.backward(up1_res.backward(du1));
    Tensor<S> du0, dd2_skip;
    split_channels(d, f2, du0, dd2_skip);
    Tensor<S> dbott = up0.backward(up0_norm.backward(up0_act.backward(du0)));

    Tensor<S> dd2(d2_.shape);
    if (guided) {
      Tensor<S> dvec_te, dce1, dvec, dte1;
      split_channels(dbott, 2 * f2, dvec_te, dce1);
      split_channels(dvec_te, f2, dvec, dte1);
      cemb1.backward(dce1.reshaped({n, f2}));
      temb1.backward(dte1.reshaped({n, f2}));
      dd2 = pool.backward(vec_act.backward(dvec));
    } else {
      Tensor<S> dvec, dte1;
      split_channels(dbott, f2, dvec, dte1);
      temb1.backward(reduce_map(dte1));
      dd2 = vec_act.backward(dvec);
    }
    for (std::int64_t i = 0; i < dd2.numel(); ++i) dd2[i] += dd2_skip[i];

    Tensor<S> dd1 = down2.backward(down2_norm.backward(down2_act.backward(dd2)));
    for (std::int64_t i = 0; i < dd1.numel(); ++i) dd1[i] += dd1_skip[i];
    Tensor<S> dh0 = down1.backward(down1_norm.backward(down1_act.backward(dd1)));
    for (std::int64_t i = 0; i < dh0.numel(); ++i) dh0[i] += dh0_skip[i];
    Tensor<S> dx = init_block.backward(dh0);
    return dx.reshaped({n, in_c * side * side});
  }

  void collect(nn::ParamList<S>& ps, const std::string& prefix) {
    init_block.collect(ps, prefix + ".init");
    down1.collect(ps, prefix + ".down1");
    down1_norm.collect(ps, prefix + ".down1_norm");
    down2.collect(ps, prefix + ".down2");
    down2_norm.collect(ps, prefix + ".down2_norm");
    temb1.collect(ps, prefix + ".temb1");
    temb2.collect(ps, prefix + ".temb2");
    if (guided) {
      cemb1.collect(ps, prefix + ".cemb1");
      cemb2.collect(ps, prefix + ".cemb2");
    }
    up0.collect(ps, prefix + ".up0");
    up0_norm.collect(ps, prefix + ".up0_norm");
    up1.collect(ps, prefix + ".up1");
    up1_res.collect(ps, prefix + ".up1_res");
    up2.collect(ps, prefix + ".up2");
    up2_res.collect(ps, prefix + ".up2_res");
    out1.collect(ps, prefix + ".out1");
    out_norm.collect(ps, prefix + ".out_norm");
    out2.collect(ps, prefix + ".out2");
  }

 private:
  /// [n, c] -> [n, c, s, s] (replicated over the map).
  Tensor<S> broadcast_map(const Tensor<S>& v, int s) {
    const int n = v.dim(0), c = v.dim(1);
    Tensor<S> out({n, c, s, s});
    for (int i = 0; i < n; ++i)
      for (int cc = 0; cc < c; ++cc) {
        const S val = v[static_cast<std::int64_t>(i) * c + cc];
        S* p = out.ptr() + (static_cast<std::int64_t>(i) * c + cc) * s * s;
        for (int j = 0; j < s * s; ++j) p[j] = val;
      }
    return out;
  }

  /// Adjoint of broadcast_map: sums over the map.
  Tensor<S> reduce_map(const Tensor<S>& m) {
    const int n = m.dim(0), c = m.dim(1), hw = m.dim(2) * m.dim(3);
    Tensor<S> out({n, c});
    for (int i = 0; i < n; ++i)
      for (int cc = 0; cc < c; ++cc) {
        const S* p = m.ptr() + (static_cast<std::int64_t>(i) * c + cc) * hw;
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) acc += static_cast<double>(p[j]);
        out[static_cast<std::int64_t>(i) * c + cc] = static_cast<S>(acc);
      }
    return out;
  }

  void expect(const Tensor<S>& t, std::vector<int> sh) {
    if (t.shape != sh)
      throw std::logic_error("UNet: shape contract violated, got " + shape_str(t));
  }

  void check_shapes() {
    Tensor<S> f({1, in_c * side * side});
    Tensor<S> t({1}, S(0.5));
    Tensor<S> c;
    if (guided) c = Tensor<S>({1, 10}, S(0.1));
    (void)forward(f, t, c);
  }
};

}  // namespace diffsem
