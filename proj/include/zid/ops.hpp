#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "zid/tensor.hpp"

ZID_NAMESPACE_BEGIN

namespace detail {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline std::int64_t norm_axis(std::int64_t axis, std::int64_t rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
    return axis;
}

/// Splits a shape around `axis` into (outer, extent, inner).
struct AxisView {
    std::int64_t outer = 1, extent = 1, inner = 1;
};
inline AxisView axis_view(const Shape& s, std::int64_t axis) {
    AxisView v;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(s.size()); ++i) {
        if (i < axis) v.outer *= s[i];
        else if (i == axis) v.extent = s[i];
        else v.inner *= s[i];
    }
    return v;
}

struct Broadcast {
    Shape out;
    std::vector<std::int64_t> stride_a, stride_b;
    bool same = false;
};

inline std::vector<std::int64_t> contiguous_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::int64_t i = static_cast<std::int64_t>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

inline Broadcast broadcast(const Shape& a, const Shape& b, std::string_view op) {
    Broadcast r;
    if (a == b) {
        r.out = a;
        r.same = true;
        return r;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
    pa.insert(pa.end(), a.begin(), a.end());
    pb.insert(pb.end(), b.begin(), b.end());
    auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
    r.out.resize(rank);
    r.stride_a.resize(rank);
    r.stride_b.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast dimension " + std::to_string(i) + " (" +
                             std::to_string(pa[i]) + " vs " + std::to_string(pb[i]) + ") of " + shape_str(a) + " and " +
                             shape_str(b));
        r.out[i] = std::max(pa[i], pb[i]);
        r.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
        r.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
    }
    return r;
}

/// Visits every output element with the matching input offsets.
template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
    const std::int64_t n = shape_numel(bc.out);
    if (bc.same) {
        for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t rank = bc.out.size();
    std::vector<std::int64_t> idx(rank, 0);
    const std::int64_t inner = bc.out[rank - 1];
    const std::int64_t ia_step = bc.stride_a[rank - 1], ib_step = bc.stride_b[rank - 1];
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t o = 0; o < n; o += inner) {
        for (std::int64_t j = 0; j < inner; ++j) f(o + j, ia + j * ia_step, ib + j * ib_step);
        for (std::int64_t d = static_cast<std::int64_t>(rank) - 2; d >= 0; --d) {
            ia += bc.stride_a[d];
            ib += bc.stride_b[d];
            if (++idx[d] < bc.out[d]) break;
            ia -= bc.stride_a[d] * bc.out[d];
            ib -= bc.stride_b[d] * bc.out[d];
            idx[d] = 0;
        }
    }
}

template <class F, class DA, class DB>
Tensor binary(std::string_view name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
    Broadcast bc = broadcast(a.shape(), b.shape(), name);
    std::vector<Real> out(static_cast<std::size_t>(shape_numel(bc.out)));
    const Real* pa = a.data().data();
    const Real* pb = b.data().data();
    for_each_broadcast(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { out[o] = f(pa[ia], pb[ib]); });
    return make_result(name, bc.out, std::move(out), {a, b}, [bc, dfa, dfb](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[self.parents.size() > 1 ? 1 : 0];
        Real* ga = grad_of(na);
        Real* gb = self.parents.size() > 1 ? grad_of(nb) : nullptr;
        const Real* xa = na.data.data();
        const Real* xb = nb.data.data();
        const Real* g = self.grad.data();
        const Real* y = self.data.data();
        for_each_broadcast(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            if (ga) ga[ia] += g[o] * dfa(xa[ia], xb[ib], y[o]);
            if (gb) gb[ib] += g[o] * dfb(xa[ia], xb[ib], y[o]);
        });
    });
}

template <class F, class DF>
Tensor unary(std::string_view name, const Tensor& x, F f, DF df) {
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = f(v);
    return make_result(name, x.shape(), std::move(out), {x}, [df](Node& self) {
        Node& p = *self.parents[0];
        Real* gp = grad_of(p);
        if (!gp) return;
        for (std::size_t i = 0; i < self.data.size(); ++i) gp[i] += self.grad[i] * df(p.data[i], self.data[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting)

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary("add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real(1); },
                          [](Real, Real, Real) { return Real(1); });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary("sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real(1); },
                          [](Real, Real, Real) { return Real(-1); });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary("mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
                          [](Real x, Real, Real) { return x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary("div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return 1 / y; },
                          [](Real, Real y, Real out) { return -out / y; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& x, Real s) {
    return detail::unary("scale", x, [s](Real v) { return v * s; }, [s](Real, Real) { return s; });
}
inline Tensor add_scalar(const Tensor& x, Real s) {
    return detail::unary("add_scalar", x, [s](Real v) { return v + s; }, [](Real, Real) { return Real(1); });
}
inline Tensor exp(const Tensor& x) {
    return detail::unary("exp", x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}
inline Tensor abs(const Tensor& x) {
    return detail::unary("abs", x, [](Real v) { return std::abs(v); },
                         [](Real v, Real) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

// ---------------------------------------------------------------------------
// Activations

inline Tensor relu(const Tensor& x) {
    return detail::unary("relu", x, [](Real v) { return v > 0 ? v : Real(0); },
                         [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

inline constexpr Real kLeakySlope = Real(0.2);

inline Tensor leaky_relu(const Tensor& x, Real slope = kLeakySlope) {
    return detail::unary("leaky_relu", x, [slope](Real v) { return v > 0 ? v : slope * v; },
                         [slope](Real v, Real) { return v > 0 ? Real(1) : slope; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        "sigmoid", x,
        [](Real v) { return v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v)); },
        [](Real, Real y) { return y * (1 - y); });
}

/// Exact GELU: x * Phi(x).
inline Tensor gelu(const Tensor& x) {
    constexpr Real inv_sqrt2 = Real(0.70710678118654752440);
    constexpr Real inv_sqrt2pi = Real(0.39894228040143267794);
    return detail::unary(
        "gelu", x, [](Real v) { return Real(0.5) * v * (1 + std::erf(v * inv_sqrt2)); },
        [](Real v, Real) { return Real(0.5) * (1 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(Real(-0.5) * v * v); });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
    Real s = 0;
    for (Real v : x.data()) s += v;
    return detail::make_result("sum", Shape{1}, {s}, {x}, [](Node& self) {
        Node& p = *self.parents[0];
        if (Real* gp = detail::grad_of(p))
            for (std::size_t i = 0; i < p.data.size(); ++i) gp[i] += self.grad[0];
    });
}

inline Tensor mean(const Tensor& x) {
    Real s = 0;
    for (Real v : x.data()) s += v;
    const Real inv = Real(1) / static_cast<Real>(x.numel());
    return detail::make_result("mean", Shape{1}, {s * inv}, {x}, [inv](Node& self) {
        Node& p = *self.parents[0];
        if (Real* gp = detail::grad_of(p))
            for (std::size_t i = 0; i < p.data.size(); ++i) gp[i] += self.grad[0] * inv;
    });
}

/// Mean along one axis, keeping it with extent 1.
inline Tensor mean_dim(const Tensor& x, std::int64_t axis) {
    axis = detail::norm_axis(axis, x.rank());
    auto v = detail::axis_view(x.shape(), axis);
    Shape os = x.shape();
    os[axis] = 1;
    std::vector<Real> out(static_cast<std::size_t>(v.outer * v.inner), 0);
    const Real* px = x.data().data();
    const Real inv = Real(1) / static_cast<Real>(v.extent);
    for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t e = 0; e < v.extent; ++e)
            for (std::int64_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += px[(o * v.extent + e) * v.inner + i];
    for (auto& val : out) val *= inv;
    return detail::make_result("mean_dim", os, std::move(out), {x}, [v, inv](Node& self) {
        Node& p = *self.parents[0];
        Real* gp = detail::grad_of(p);
        if (!gp) return;
        for (std::int64_t o = 0; o < v.outer; ++o)
            for (std::int64_t e = 0; e < v.extent; ++e)
                for (std::int64_t i = 0; i < v.inner; ++i) gp[(o * v.extent + e) * v.inner + i] += self.grad[o * v.inner + i] * inv;
    });
}

/// Max along one axis, keeping it with extent 1. Gradient routes to the
/// first maximal element.
inline Tensor max_dim(const Tensor& x, std::int64_t axis) {
    axis = detail::norm_axis(axis, x.rank());
    auto v = detail::axis_view(x.shape(), axis);
    Shape os = x.shape();
    os[axis] = 1;
    std::vector<Real> out(static_cast<std::size_t>(v.outer * v.inner));
    std::vector<std::int64_t> arg(out.size());
    const Real* px = x.data().data();
    for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t i = 0; i < v.inner; ++i) {
            std::int64_t best = 0;
            Real bv = px[o * v.extent * v.inner + i];
            for (std::int64_t e = 1; e < v.extent; ++e) {
                Real c = px[(o * v.extent + e) * v.inner + i];
                if (c > bv) bv = c, best = e;
            }
            out[o * v.inner + i] = bv;
            arg[o * v.inner + i] = (o * v.extent + best) * v.inner + i;
        }
    return detail::make_result("max_dim", os, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
        Real* gp = detail::grad_of(*self.parents[0]);
        if (!gp) return;
        for (std::size_t k = 0; k < arg.size(); ++k) gp[arg[k]] += self.grad[k];
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.numel()) + " elements, target " +
                         shape_str(shape) + " has " + std::to_string(shape_numel(shape)));
    std::vector<Real> out(x.data().begin(), x.data().end());
    return detail::make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
        Real* gp = detail::grad_of(*self.parents[0]);
        if (!gp) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
    });
}

/// Concatenation along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& xs, std::int64_t axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    axis = detail::norm_axis(axis, xs[0].rank());
    Shape os = xs[0].shape();
    os[axis] = 0;
    for (const auto& t : xs) {
        if (t.rank() != xs[0].rank()) throw ShapeError("concat: rank mismatch");
        for (std::int64_t d = 0; d < t.rank(); ++d)
            if (d != axis && t.dim(d) != xs[0].dim(d))
                throw ShapeError("concat: dimension " + std::to_string(d) + " differs (" + std::to_string(t.dim(d)) + " vs " +
                                 std::to_string(xs[0].dim(d)) + ")");
        os[axis] += t.dim(axis);
    }
    auto v = detail::axis_view(os, axis);
    std::vector<Real> out(static_cast<std::size_t>(shape_numel(os)));
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& t : xs) {
        offsets.push_back(off);
        const std::int64_t ext = t.dim(axis);
        const Real* src = t.data().data();
        for (std::int64_t o = 0; o < v.outer; ++o)
            std::copy_n(src + o * ext * v.inner, ext * v.inner, out.begin() + (o * v.extent + off) * v.inner);
        off += ext;
    }
    return detail::make_result("concat", os, std::move(out), xs, [v, offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            Real* gp = detail::grad_of(p);
            if (!gp) continue;
            const std::int64_t ext = static_cast<std::int64_t>(p.data.size()) / (v.outer * v.inner);
            for (std::int64_t o = 0; o < v.outer; ++o)
                for (std::int64_t j = 0; j < ext * v.inner; ++j) gp[o * ext * v.inner + j] += self.grad[(o * v.extent + offsets[k]) * v.inner + j];
        }
    });
}

/// Sub-range [start, start+length) along `axis`.
inline Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
    axis = detail::norm_axis(axis, x.rank());
    if (start < 0 || length <= 0 || start + length > x.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) + ") exceeds dimension " +
                         std::to_string(axis) + " of extent " + std::to_string(x.dim(axis)));
    auto v = detail::axis_view(x.shape(), axis);
    Shape os = x.shape();
    os[axis] = length;
    std::vector<Real> out(static_cast<std::size_t>(shape_numel(os)));
    const Real* px = x.data().data();
    for (std::int64_t o = 0; o < v.outer; ++o)
        std::copy_n(px + (o * v.extent + start) * v.inner, length * v.inner, out.begin() + o * length * v.inner);
    return detail::make_result("slice", os, std::move(out), {x}, [v, start, length](Node& self) {
        Real* gp = detail::grad_of(*self.parents[0]);
        if (!gp) return;
        for (std::int64_t o = 0; o < v.outer; ++o)
            for (std::int64_t j = 0; j < length * v.inner; ++j) gp[(o * v.extent + start) * v.inner + j] += self.grad[o * length * v.inner + j];
    });
}

/// Equal split into `parts` chunks along `axis`.
inline std::vector<Tensor> split(const Tensor& x, std::int64_t axis, std::int64_t parts) {
    const std::int64_t ext = x.dim(axis);
    if (parts <= 0 || ext % parts != 0)
        throw ShapeError("split: dimension " + std::to_string(axis) + " of extent " + std::to_string(ext) + " not divisible into " +
                         std::to_string(parts));
    std::vector<Tensor> out;
    for (std::int64_t k = 0; k < parts; ++k) out.push_back(slice(x, axis, k * (ext / parts), ext / parts));
    return out;
}

/// Swaps the two trailing axes.
inline Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("transpose_last2: rank must be >= 2");
    const std::int64_t m = x.dim(-2), n = x.dim(-1), batch = x.numel() / (m * n);
    Shape os = x.shape();
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    std::vector<Real> out(static_cast<std::size_t>(x.numel()));
    const Real* px = x.data().data();
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = px[b * m * n + i * n + j];
    return detail::make_result("transpose", os, std::move(out), {x}, [m, n, batch](Node& self) {
        Real* gp = detail::grad_of(*self.parents[0]);
        if (!gp) return;
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) gp[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product over identical leading dimensions.
inline Tensor matmul_batched(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != a.rank()) throw ShapeError("matmul_batched: operands must share rank >= 2");
    for (std::int64_t d = 0; d < a.rank() - 2; ++d)
        if (a.dim(d) != b.dim(d))
            throw ShapeError("matmul_batched: leading dimension " + std::to_string(d) + " differs (" + std::to_string(a.dim(d)) + " vs " +
                             std::to_string(b.dim(d)) + ")");
    const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    if (b.dim(-2) != k)
        throw ShapeError("matmul_batched: inner dimensions differ (" + std::to_string(k) + " vs " + std::to_string(b.dim(-2)) + ")");
    const std::int64_t batch = a.numel() / (m * k);
    Shape os = a.shape();
    os.back() = n;
    std::vector<Real> out(static_cast<std::size_t>(batch * m * n));
    detail::count_macs(static_cast<std::uint64_t>(batch * m * k * n));
    for (std::int64_t i = 0; i < batch; ++i)
        detail::MapMat(out.data() + i * m * n, m, n).noalias() =
            detail::CMapMat(a.data().data() + i * m * k, m, k) * detail::CMapMat(b.data().data() + i * k * n, k, n);
    return detail::make_result("matmul", os, std::move(out), {a, b}, [m, k, n, batch](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        Real* ga = detail::grad_of(na);
        Real* gb = detail::grad_of(nb);
        for (std::int64_t i = 0; i < batch; ++i) {
            detail::CMapMat g(self.grad.data() + i * m * n, m, n);
            if (ga) detail::MapMat(ga + i * m * k, m, k).noalias() += g * detail::CMapMat(nb.data.data() + i * k * n, k, n).transpose();
            if (gb) detail::MapMat(gb + i * k * n, k, n).noalias() += detail::CMapMat(na.data.data() + i * m * k, m, k).transpose() * g;
        }
    });
}

/// y = x W^T + b for x [B, in], W [out, in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor()) {
    if (x.rank() != 2 || w.rank() != 2) throw ShapeError("linear: expects x [B,in] and W [out,in]");
    const std::int64_t batch = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    if (w.dim(1) != in) throw ShapeError("linear: input features " + std::to_string(in) + " vs weight columns " + std::to_string(w.dim(1)));
    if (b.defined() && b.numel() != out_f) throw ShapeError("linear: bias size mismatch");
    std::vector<Real> out(static_cast<std::size_t>(batch * out_f));
    detail::count_macs(static_cast<std::uint64_t>(batch * in * out_f));
    detail::MapMat y(out.data(), batch, out_f);
    y.noalias() = detail::CMapMat(x.data().data(), batch, in) * detail::CMapMat(w.data().data(), out_f, in).transpose();
    if (b.defined())
        for (std::int64_t r = 0; r < batch; ++r)
            for (std::int64_t c = 0; c < out_f; ++c) y(r, c) += b[c];
    return detail::make_result("linear", Shape{batch, out_f}, std::move(out), {x, w, b}, [batch, in, out_f](Node& self) {
        Node& nx = *self.parents[0];
        Node& nw = *self.parents[1];
        Real* gx = detail::grad_of(nx);
        Real* gw = detail::grad_of(nw);
        Real* gb = self.parents.size() > 2 ? detail::grad_of(*self.parents[2]) : nullptr;
        detail::CMapMat g(self.grad.data(), batch, out_f);
        if (gx) detail::MapMat(gx, batch, in).noalias() += g * detail::CMapMat(nw.data.data(), out_f, in);
        if (gw) detail::MapMat(gw, out_f, in).noalias() += g.transpose() * detail::CMapMat(nx.data.data(), batch, in);
        if (gb)
            for (std::int64_t r = 0; r < batch; ++r)
                for (std::int64_t c = 0; c < out_f; ++c) gb[c] += g(r, c);
    });
}

// ---------------------------------------------------------------------------
// Normalizations along an axis

/// Max-subtracted softmax along `axis`.
inline Tensor softmax_dim(const Tensor& x, std::int64_t axis) {
    axis = detail::norm_axis(axis, x.rank());
    auto v = detail::axis_view(x.shape(), axis);
    std::vector<Real> out(x.data().begin(), x.data().end());
    for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t i = 0; i < v.inner; ++i) {
            Real* base = out.data() + o * v.extent * v.inner + i;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::int64_t e = 0; e < v.extent; ++e) mx = std::max(mx, base[e * v.inner]);
            Real s = 0;
            for (std::int64_t e = 0; e < v.extent; ++e) s += (base[e * v.inner] = std::exp(base[e * v.inner] - mx));
            for (std::int64_t e = 0; e < v.extent; ++e) base[e * v.inner] /= s;
        }
    return detail::make_result("softmax", x.shape(), std::move(out), {x}, [v](Node& self) {
        Real* gp = detail::grad_of(*self.parents[0]);
        if (!gp) return;
        for (std::int64_t o = 0; o < v.outer; ++o)
            for (std::int64_t i = 0; i < v.inner; ++i) {
                const std::int64_t base = o * v.extent * v.inner + i;
                Real dot = 0;
                for (std::int64_t e = 0; e < v.extent; ++e) dot += self.grad[base + e * v.inner] * self.data[base + e * v.inner];
                for (std::int64_t e = 0; e < v.extent; ++e) {
                    const std::int64_t k = base + e * v.inner;
                    gp[k] += self.data[k] * (self.grad[k] - dot);
                }
            }
    });
}

/// x / sqrt(sum(x^2) + eps) along `axis`.
inline Tensor l2_normalize_dim(const Tensor& x, std::int64_t axis, Real eps = Real(1e-12)) {
    axis = detail::norm_axis(axis, x.rank());
    auto v = detail::axis_view(x.shape(), axis);
    std::vector<Real> out(x.data().begin(), x.data().end());
    std::vector<Real> norms(static_cast<std::size_t>(v.outer * v.inner));
    for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t i = 0; i < v.inner; ++i) {
            Real* base = out.data() + o * v.extent * v.inner + i;
            Real s = 0;
            for (std::int64_t e = 0; e < v.extent; ++e) s += base[e * v.inner] * base[e * v.inner];
            const Real nrm = std::sqrt(s + eps);
            norms[o * v.inner + i] = nrm;
            for (std::int64_t e = 0; e < v.extent; ++e) base[e * v.inner] /= nrm;
        }
    return detail::make_result("l2_normalize", x.shape(), std::move(out), {x}, [v, norms = std::move(norms)](Node& self) {
        Real* gp = detail::grad_of(*self.parents[0]);
        if (!gp) return;
        // dx = (g - y * <g, y>) / n
        for (std::int64_t o = 0; o < v.outer; ++o)
            for (std::int64_t i = 0; i < v.inner; ++i) {
                const std::int64_t base = o * v.extent * v.inner + i;
                const Real nrm = norms[o * v.inner + i];
                Real dot = 0;
                for (std::int64_t e = 0; e < v.extent; ++e) dot += self.grad[base + e * v.inner] * self.data[base + e * v.inner];
                for (std::int64_t e = 0; e < v.extent; ++e) {
                    const std::int64_t k = base + e * v.inner;
                    gp[k] += (self.grad[k] - self.data[k] * dot) / nrm;
                }
            }
    });
}

ZID_NAMESPACE_END
