#pragma once

#include "zid/ops.hpp"

ZID_NAMESPACE_BEGIN

struct Conv2dOptions {
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t groups = 1;
};

namespace detail {

struct ConvGeom {
    std::int64_t B, Ci, H, W, Co, kh, kw, stride, pad, groups, Ho, Wo;
    std::int64_t ci_g() const { return Ci / groups; }
    std::int64_t co_g() const { return Co / groups; }
    std::int64_t K() const { return ci_g() * kh * kw; }
    std::int64_t P() const { return Ho * Wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
    bool depthwise() const { return ci_g() == 1 && co_g() == 1; }
};

// Unrolls channels [c0, c0+nc) of one image into a [nc*kh*kw, Ho*Wo] matrix.
inline void im2col(const Real* x, const ConvGeom& g, std::int64_t c0, std::int64_t nc, Real* col) {
    const std::int64_t P = g.P();
    for (std::int64_t c = 0; c < nc; ++c) {
        const Real* plane = x + (c0 + c) * g.H * g.W;
        for (std::int64_t i = 0; i < g.kh; ++i)
            for (std::int64_t j = 0; j < g.kw; ++j) {
                Real* row = col + ((c * g.kh + i) * g.kw + j) * P;
                for (std::int64_t oy = 0; oy < g.Ho; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad + i;
                    Real* dst = row + oy * g.Wo;
                    if (iy < 0 || iy >= g.H) {
                        std::fill_n(dst, g.Wo, Real(0));
                        continue;
                    }
                    const Real* src = plane + iy * g.W;
                    for (std::int64_t ox = 0; ox < g.Wo; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.pad + j;
                        dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : Real(0);
                    }
                }
            }
    }
}

inline void col2im(const Real* col, const ConvGeom& g, std::int64_t c0, std::int64_t nc, Real* dx) {
    const std::int64_t P = g.P();
    for (std::int64_t c = 0; c < nc; ++c) {
        Real* plane = dx + (c0 + c) * g.H * g.W;
        for (std::int64_t i = 0; i < g.kh; ++i)
            for (std::int64_t j = 0; j < g.kw; ++j) {
                const Real* row = col + ((c * g.kh + i) * g.kw + j) * P;
                for (std::int64_t oy = 0; oy < g.Ho; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad + i;
                    if (iy < 0 || iy >= g.H) continue;
                    Real* dst = plane + iy * g.W;
                    const Real* src = row + oy * g.Wo;
                    for (std::int64_t ox = 0; ox < g.Wo; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.pad + j;
                        if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
                    }
                }
            }
    }
}

inline void depthwise_forward(const Real* x, const Real* w, const ConvGeom& g, Real* y) {
    for (std::int64_t c = 0; c < g.Ci; ++c) {
        const Real* plane = x + c * g.H * g.W;
        const Real* k = w + c * g.kh * g.kw;
        Real* out = y + c * g.P();
        for (std::int64_t oy = 0; oy < g.Ho; ++oy)
            for (std::int64_t ox = 0; ox < g.Wo; ++ox) {
                Real acc = 0;
                for (std::int64_t i = 0; i < g.kh; ++i) {
                    const std::int64_t iy = oy * g.stride - g.pad + i;
                    if (iy < 0 || iy >= g.H) continue;
                    for (std::int64_t j = 0; j < g.kw; ++j) {
                        const std::int64_t ix = ox * g.stride - g.pad + j;
                        if (ix >= 0 && ix < g.W) acc += plane[iy * g.W + ix] * k[i * g.kw + j];
                    }
                }
                out[oy * g.Wo + ox] = acc;
            }
    }
}

inline void depthwise_backward(const Real* x, const Real* w, const Real* gy, const ConvGeom& g, Real* gx, Real* gw) {
    for (std::int64_t c = 0; c < g.Ci; ++c) {
        const Real* plane = x + c * g.H * g.W;
        const Real* k = w + c * g.kh * g.kw;
        const Real* go = gy + c * g.P();
        for (std::int64_t oy = 0; oy < g.Ho; ++oy)
            for (std::int64_t ox = 0; ox < g.Wo; ++ox) {
                const Real gv = go[oy * g.Wo + ox];
                for (std::int64_t i = 0; i < g.kh; ++i) {
                    const std::int64_t iy = oy * g.stride - g.pad + i;
                    if (iy < 0 || iy >= g.H) continue;
                    for (std::int64_t j = 0; j < g.kw; ++j) {
                        const std::int64_t ix = ox * g.stride - g.pad + j;
                        if (ix < 0 || ix >= g.W) continue;
                        if (gx) gx[c * g.H * g.W + iy * g.W + ix] += gv * k[i * g.kw + j];
                        if (gw) gw[c * g.kh * g.kw + i * g.kw + j] += gv * plane[iy * g.W + ix];
                    }
                }
            }
    }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. Input [B,Ci,H,W], weight
/// [Co,Ci/groups,kh,kw], optional bias [Co].
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor(), Conv2dOptions opt = {}) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be rank 4 [B,C,H,W], got " + shape_str(input.shape()));
    if (weight.rank() != 4) throw ShapeError("conv2d: weight must be rank 4 [Co,Ci/g,kh,kw], got " + shape_str(weight.shape()));
    if (opt.stride <= 0 || opt.padding < 0 || opt.groups <= 0) throw ShapeError("conv2d: invalid stride/padding/groups");
    detail::ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
                       opt.stride, opt.padding, opt.groups, 0, 0};
    if (g.Ci % g.groups != 0) throw ShapeError("conv2d: input channels " + std::to_string(g.Ci) + " not divisible by groups " + std::to_string(g.groups));
    if (g.Co % g.groups != 0) throw ShapeError("conv2d: output channels " + std::to_string(g.Co) + " not divisible by groups " + std::to_string(g.groups));
    if (weight.dim(1) != g.ci_g())
        throw ShapeError("conv2d: weight dimension 1 is " + std::to_string(weight.dim(1)) + ", expected Ci/groups = " + std::to_string(g.ci_g()));
    if (g.H + 2 * g.pad < g.kh) throw ShapeError("conv2d: height " + std::to_string(g.H) + " too small for kernel " + std::to_string(g.kh));
    if (g.W + 2 * g.pad < g.kw) throw ShapeError("conv2d: width " + std::to_string(g.W) + " too small for kernel " + std::to_string(g.kw));
    if (bias.defined() && bias.numel() != g.Co) throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) + " entries, expected " + std::to_string(g.Co));
    g.Ho = (g.H + 2 * g.pad - g.kh) / g.stride + 1;
    g.Wo = (g.W + 2 * g.pad - g.kw) / g.stride + 1;

    const std::int64_t P = g.P(), K = g.K(), cog = g.co_g(), cig = g.ci_g();
    std::vector<Real> out(static_cast<std::size_t>(g.B * g.Co * P));
    detail::count_macs(static_cast<std::uint64_t>(g.B * g.Co * P * K));
    const Real* x = input.data().data();
    const Real* w = weight.data().data();
    std::vector<Real> col;
    if (!g.pointwise() && !g.depthwise()) col.resize(static_cast<std::size_t>(K * P));
    for (std::int64_t b = 0; b < g.B; ++b) {
        const Real* xb = x + b * g.Ci * g.H * g.W;
        Real* yb = out.data() + b * g.Co * P;
        if (g.depthwise()) {
            detail::depthwise_forward(xb, w, g, yb);
            continue;
        }
        for (std::int64_t gi = 0; gi < g.groups; ++gi) {
            const Real* cp = xb + gi * cig * g.H * g.W;
            if (!g.pointwise()) {
                detail::im2col(xb, g, gi * cig, cig, col.data());
                cp = col.data();
            }
            detail::MapMat(yb + gi * cog * P, cog, P).noalias() = detail::CMapMat(w + gi * cog * K, cog, K) * detail::CMapMat(cp, K, P);
        }
    }
    if (bias.defined()) {
        const Real* pb = bias.data().data();
        for (std::int64_t b = 0; b < g.B; ++b)
            for (std::int64_t c = 0; c < g.Co; ++c) {
                Real* yc = out.data() + (b * g.Co + c) * P;
                for (std::int64_t p = 0; p < P; ++p) yc[p] += pb[c];
            }
    }
    return detail::make_result("conv2d", Shape{g.B, g.Co, g.Ho, g.Wo}, std::move(out), {input, weight, bias}, [g](Node& self) {
        Node& nx = *self.parents[0];
        Node& nw = *self.parents[1];
        Real* gx = detail::grad_of(nx);
        Real* gw = detail::grad_of(nw);
        Real* gb = self.parents.size() > 2 ? detail::grad_of(*self.parents[2]) : nullptr;
        const std::int64_t P = g.P(), K = g.K(), cog = g.co_g(), cig = g.ci_g();
        const Real* gy = self.grad.data();
        if (gb)
            for (std::int64_t b = 0; b < g.B; ++b)
                for (std::int64_t c = 0; c < g.Co; ++c) {
                    const Real* gc = gy + (b * g.Co + c) * P;
                    Real s = 0;
                    for (std::int64_t p = 0; p < P; ++p) s += gc[p];
                    gb[c] += s;
                }
        if (!gx && !gw) return;
        std::vector<Real> col, dcol;
        if (!g.pointwise() && !g.depthwise()) {
            if (gw) col.resize(static_cast<std::size_t>(K * P));
            if (gx) dcol.resize(static_cast<std::size_t>(K * P));
        }
        for (std::int64_t b = 0; b < g.B; ++b) {
            const Real* xb = nx.data.data() + b * g.Ci * g.H * g.W;
            const Real* gyb = gy + b * g.Co * P;
            Real* gxb = gx ? gx + b * g.Ci * g.H * g.W : nullptr;
            if (g.depthwise()) {
                detail::depthwise_backward(xb, nw.data.data(), gyb, g, gxb, gw);
                continue;
            }
            for (std::int64_t gi = 0; gi < g.groups; ++gi) {
                detail::CMapMat dY(gyb + gi * cog * P, cog, P);
                detail::CMapMat Wg(nw.data.data() + gi * cog * K, cog, K);
                if (g.pointwise()) {
                    if (gw) detail::MapMat(gw + gi * cog * K, cog, K).noalias() += dY * detail::CMapMat(xb + gi * cig * g.H * g.W, K, P).transpose();
                    if (gxb) detail::MapMat(gxb + gi * cig * g.H * g.W, K, P).noalias() += Wg.transpose() * dY;
                    continue;
                }
                if (gw) {
                    detail::im2col(xb, g, gi * cig, cig, col.data());
                    detail::MapMat(gw + gi * cog * K, cog, K).noalias() += dY * detail::CMapMat(col.data(), K, P).transpose();
                }
                if (gxb) {
                    detail::MapMat(dcol.data(), K, P).noalias() = Wg.transpose() * dY;
                    detail::col2im(dcol.data(), g, gi * cig, cig, gxb);
                }
            }
        }
    });
}

/// Per-(sample, channel) standardization over H x W, then affine.
inline Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5)) {
    if (x.rank() != 4) throw ShapeError("instance_norm: input must be rank 4, got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
    if (gamma.numel() != C || beta.numel() != C) throw ShapeError("instance_norm: gamma/beta must have " + std::to_string(C) + " entries");
    std::vector<Real> out(static_cast<std::size_t>(x.numel()));
    std::vector<Real> xhat(out.size()), inv_std(static_cast<std::size_t>(B * C));
    const Real* px = x.data().data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const Real* p = px + bc * N;
        double m = 0;
        for (std::int64_t i = 0; i < N; ++i) m += p[i];
        m /= static_cast<double>(N);
        double var = 0;
        for (std::int64_t i = 0; i < N; ++i) var += (p[i] - m) * (p[i] - m);
        var /= static_cast<double>(N);
        const Real is = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std[bc] = is;
        const Real ga = gamma[bc % C], be = beta[bc % C];
        for (std::int64_t i = 0; i < N; ++i) {
            const Real h = (p[i] - static_cast<Real>(m)) * is;
            xhat[bc * N + i] = h;
            out[bc * N + i] = h * ga + be;
        }
    }
    return detail::make_result("instance_norm", x.shape(), std::move(out), {x, gamma, beta},
                               [B, C, N, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                                   Real* gx = detail::grad_of(*self.parents[0]);
                                   Node& ng = *self.parents[1];
                                   Real* gg = detail::grad_of(ng);
                                   Real* gb = detail::grad_of(*self.parents[2]);
                                   for (std::int64_t bc = 0; bc < B * C; ++bc) {
                                       const Real* gy = self.grad.data() + bc * N;
                                       const Real* h = xhat.data() + bc * N;
                                       const std::int64_t c = bc % C;
                                       Real sg = 0, sgh = 0;
                                       for (std::int64_t i = 0; i < N; ++i) {
                                           sg += gy[i];
                                           sgh += gy[i] * h[i];
                                       }
                                       if (gg) gg[c] += sgh;
                                       if (gb) gb[c] += sg;
                                       if (gx) {
                                           const Real ga = ng.data[static_cast<std::size_t>(c)];
                                           const Real k = ga * inv_std[bc] / static_cast<Real>(N);
                                           for (std::int64_t i = 0; i < N; ++i)
                                               gx[bc * N + i] += k * (static_cast<Real>(N) * gy[i] - sg - h[i] * sgh);
                                       }
                                   }
                               });
}

namespace detail {

struct Lerp1d {
    std::vector<std::int64_t> i0, i1;
    std::vector<Real> w1;
};

// Align-corners-false source coordinates for integer upscaling.
inline Lerp1d bilinear_taps(std::int64_t in, std::int64_t out, std::int64_t factor) {
    Lerp1d t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.w1.resize(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (o + 0.5) / static_cast<double>(factor) - 0.5;
        if (src < 0) src = 0;
        std::int64_t a = static_cast<std::int64_t>(std::floor(src));
        if (a > in - 1) a = in - 1;
        t.i0[o] = a;
        t.i1[o] = std::min(a + 1, in - 1);
        t.w1[o] = static_cast<Real>(src - a);
    }
    return t;
}

}  // namespace detail

/// Bilinear upsampling by an integer factor (align_corners = false).
inline Tensor bilinear_upsample(const Tensor& x, std::int64_t factor) {
    if (x.rank() != 4) throw ShapeError("bilinear_upsample: input must be rank 4");
    if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
    const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), Ho = H * factor, Wo = W * factor;
    auto ty = detail::bilinear_taps(H, Ho, factor), tx = detail::bilinear_taps(W, Wo, factor);
    std::vector<Real> out(static_cast<std::size_t>(BC * Ho * Wo));
    const Real* px = x.data().data();
    for (std::int64_t p = 0; p < BC; ++p) {
        const Real* src = px + p * H * W;
        Real* dst = out.data() + p * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
            const Real wy = ty.w1[oy];
            const Real* r0 = src + ty.i0[oy] * W;
            const Real* r1 = src + ty.i1[oy] * W;
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
                const Real wx = tx.w1[ox];
                const Real top = r0[tx.i0[ox]] * (1 - wx) + r0[tx.i1[ox]] * wx;
                const Real bot = r1[tx.i0[ox]] * (1 - wx) + r1[tx.i1[ox]] * wx;
                dst[oy * Wo + ox] = top * (1 - wy) + bot * wy;
            }
        }
    }
    return detail::make_result("bilinear_upsample", Shape{x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {x},
                               [BC, H, W, Ho, Wo, ty = std::move(ty), tx = std::move(tx)](Node& self) {
                                   Real* gp = detail::grad_of(*self.parents[0]);
                                   if (!gp) return;
                                   for (std::int64_t p = 0; p < BC; ++p) {
                                       Real* dst = gp + p * H * W;
                                       const Real* g = self.grad.data() + p * Ho * Wo;
                                       for (std::int64_t oy = 0; oy < Ho; ++oy) {
                                           const Real wy = ty.w1[oy];
                                           Real* r0 = dst + ty.i0[oy] * W;
                                           Real* r1 = dst + ty.i1[oy] * W;
                                           for (std::int64_t ox = 0; ox < Wo; ++ox) {
                                               const Real wx = tx.w1[ox], gv = g[oy * Wo + ox];
                                               r0[tx.i0[ox]] += gv * (1 - wy) * (1 - wx);
                                               r0[tx.i1[ox]] += gv * (1 - wy) * wx;
                                               r1[tx.i0[ox]] += gv * wy * (1 - wx);
                                               r1[tx.i1[ox]] += gv * wy * wx;
                                           }
                                       }
                                   }
                               });
}

/// Mean over disjoint factor x factor blocks.
inline Tensor avg_downsample(const Tensor& x, std::int64_t factor) {
    if (x.rank() != 4) throw ShapeError("avg_downsample: input must be rank 4");
    if (factor < 1) throw ShapeError("avg_downsample: factor must be >= 1");
    const std::int64_t H = x.dim(2), W = x.dim(3);
    if (H % factor) throw ShapeError("avg_downsample: height " + std::to_string(H) + " not divisible by " + std::to_string(factor));
    if (W % factor) throw ShapeError("avg_downsample: width " + std::to_string(W) + " not divisible by " + std::to_string(factor));
    const std::int64_t BC = x.dim(0) * x.dim(1), Ho = H / factor, Wo = W / factor;
    const Real inv = Real(1) / static_cast<Real>(factor * factor);
    std::vector<Real> out(static_cast<std::size_t>(BC * Ho * Wo), 0);
    const Real* px = x.data().data();
    for (std::int64_t p = 0; p < BC; ++p)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t xx = 0; xx < W; ++xx) out[(p * Ho + y / factor) * Wo + xx / factor] += px[(p * H + y) * W + xx];
    for (auto& v : out) v *= inv;
    return detail::make_result("avg_downsample", Shape{x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {x},
                               [BC, H, W, Ho, Wo, factor, inv](Node& self) {
                                   Real* gp = detail::grad_of(*self.parents[0]);
                                   if (!gp) return;
                                   for (std::int64_t p = 0; p < BC; ++p)
                                       for (std::int64_t y = 0; y < H; ++y)
                                           for (std::int64_t xx = 0; xx < W; ++xx)
                                               gp[(p * H + y) * W + xx] += self.grad[(p * Ho + y / factor) * Wo + xx / factor] * inv;
                               });
}

/// [B,C,H,W] -> [B,C,1,1] plane means.
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be rank 4");
    const std::int64_t B = x.dim(0), C = x.dim(1);
    return reshape(mean_dim(reshape(x, Shape{B, C, x.dim(2) * x.dim(3)}), 2), Shape{B, C, 1, 1});
}

ZID_NAMESPACE_END
