#pragma once

#include <array>

#include "zid/image.hpp"
#include "zid/rng.hpp"

ZID_NAMESPACE_BEGIN

enum class DepthKind { ramp, radial, noisy_ramp };

inline std::string_view to_string(DepthKind k) {
    switch (k) {
        case DepthKind::ramp: return "ramp";
        case DepthKind::radial: return "radial";
        case DepthKind::noisy_ramp: return "noisy_ramp";
    }
    return "?";
}

inline DepthKind parse_depth_kind(std::string_view s) {
    if (s == "ramp") return DepthKind::ramp;
    if (s == "radial") return DepthKind::radial;
    if (s == "noisy_ramp") return DepthKind::noisy_ramp;
    throw DataError("unknown depth kind '" + std::string(s) + "'");
}

/// Single-channel H x W map (row-major).
struct Plane {
    std::int64_t height = 0, width = 0;
    std::vector<double> values;

    Plane() = default;
    Plane(std::int64_t h, std::int64_t w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}
    double& at(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * width + x)]; }
    double at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
};

struct SceneParams {
    std::array<double, 3> airlight{1, 1, 1};
    Plane depth;
    double beta_scatter = 1.0;
    DepthKind depth_kind = DepthKind::ramp;
    std::uint64_t seed = 0;

    Plane transmission() const {
        Plane t(depth.height, depth.width);
        for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = std::exp(-beta_scatter * depth.values[i]);
        return t;
    }
};

struct HazyCleanPair {
    Image clean, hazy;
    SceneParams scene;
};

// ---------------------------------------------------------------------------
// Procedural generators

namespace detail {

/// Smooth noise: random g x g lattice, bilinearly interpolated to h x w.
inline Plane value_noise(Rng& rng, std::int64_t h, std::int64_t w, std::int64_t g) {
    std::vector<double> lattice(static_cast<std::size_t>((g + 1) * (g + 1)));
    for (auto& v : lattice) v = rng.uniform();
    Plane p(h, w);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const double fy = static_cast<double>(y) / std::max<std::int64_t>(1, h - 1) * g, fx = static_cast<double>(x) / std::max<std::int64_t>(1, w - 1) * g;
            const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(fy), g - 1), x0 = std::min<std::int64_t>(static_cast<std::int64_t>(fx), g - 1);
            const double ty = fy - y0, tx = fx - x0;
            auto L = [&](std::int64_t yy, std::int64_t xx) { return lattice[static_cast<std::size_t>(yy * (g + 1) + xx)]; };
            p.at(y, x) = (1 - ty) * ((1 - tx) * L(y0, x0) + tx * L(y0, x0 + 1)) + ty * ((1 - tx) * L(y0 + 1, x0) + tx * L(y0 + 1, x0 + 1));
        }
    return p;
}

inline void normalize01(Plane& p) {
    const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
    const double a = *lo, b = *hi;
    for (auto& v : p.values) v = b > a ? (v - a) / (b - a) : 0.0;
}

}  // namespace detail

/// Layered value noise, 3-8 solid rectangles/disks and one smooth gradient.
inline Image gen_clean_image(Rng rng, std::int64_t h, std::int64_t w) {
    if (h < 16 || w < 16) throw ShapeError("gen_clean_image: size must be at least 16x16");
    ColorField f(h, w);
    Rng bg = rng.split("background");
    for (int c = 0; c < 3; ++c) {
        const double base = bg.uniform(0.15, 0.85);
        Plane acc(h, w, base);
        double amp = 0.35;
        for (std::int64_t g : {2, 4, 8}) {
            Plane n = detail::value_noise(bg, h, w, g);
            for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += amp * (n.values[i] - 0.5);
            amp *= 0.5;
        }
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) f.at(y, x, c) = acc.at(y, x);
    }
    Rng shapes = rng.split("shapes");
    const auto n_shapes = shapes.uniform_int(3, 8);
    for (std::int64_t s = 0; s < n_shapes; ++s) {
        const double col[3] = {shapes.uniform(), shapes.uniform(), shapes.uniform()};
        const bool disk = shapes.uniform() < 0.5;
        const double cy = shapes.uniform(0, static_cast<double>(h)), cx = shapes.uniform(0, static_cast<double>(w));
        const double ry = shapes.uniform(0.06, 0.25) * static_cast<double>(h), rx = shapes.uniform(0.06, 0.25) * static_cast<double>(w);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double dy = (static_cast<double>(y) + 0.5 - cy) / ry, dx = (static_cast<double>(x) + 0.5 - cx) / rx;
                const bool inside = disk ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
                if (inside)
                    for (int c = 0; c < 3; ++c) f.at(y, x, c) = col[c];
            }
    }
    Rng grad = rng.split("gradient");
    const double angle = grad.uniform(0, 2 * 3.141592653589793), strength = grad.uniform(0.1, 0.3);
    const double gy = std::sin(angle), gx = std::cos(angle);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const double r = (gy * (static_cast<double>(y) / (h - 1) - 0.5) + gx * (static_cast<double>(x) / (w - 1) - 0.5));
            for (int c = 0; c < 3; ++c) f.at(y, x, c) += strength * r;
        }
    return Image::clamped(f);
}

/// Depth in [0, 1] with min exactly 0 and max exactly 1.
inline Plane gen_depth(Rng rng, std::int64_t h, std::int64_t w, DepthKind kind) {
    Plane d(h, w);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Plane noise;
    if (kind == DepthKind::noisy_ramp) noise = detail::value_noise(rng, h, w, 4);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const double ramp = static_cast<double>(y) / std::max<std::int64_t>(1, h - 1);
            switch (kind) {
                case DepthKind::ramp: d.at(y, x) = ramp; break;
                case DepthKind::radial: d.at(y, x) = std::hypot(y - cy, x - cx); break;
                case DepthKind::noisy_ramp: d.at(y, x) = ramp + 0.3 * noise.at(y, x); break;
            }
        }
    detail::normalize01(d);
    return d;
}

inline Plane gen_depth(Rng rng, std::int64_t h, std::int64_t w) {
    const auto kind = static_cast<DepthKind>(rng.uniform_int(0, 2));
    return gen_depth(rng.split("depth"), h, w, kind);
}

/// I_h = clip(I_c * t + A (1 - t), 0, 1).
inline Image synth_haze(const Image& clean, const SceneParams& scene) {
    if (scene.depth.height != clean.height() || scene.depth.width != clean.width()) throw ShapeError("synth_haze: depth size differs from image");
    const Plane t = scene.transmission();
    Image out(clean.height(), clean.width());
    for (std::int64_t y = 0; y < clean.height(); ++y)
        for (std::int64_t x = 0; x < clean.width(); ++x) {
            const double ti = t.at(y, x);
            for (int c = 0; c < 3; ++c) out.set(y, x, c, clean.at(y, x, c) * ti + scene.airlight[c] * (1 - ti));
        }
    return out;
}

inline constexpr double kBetaMin = 0.5, kBetaMax = 3.0;

/// Draws scene parameters from `seed` alone, so a sidecar seed reproduces the pair.
inline SceneParams gen_scene(std::uint64_t seed, std::int64_t h, std::int64_t w) {
    Rng rng(seed);
    SceneParams s;
    s.seed = seed;
    Rng a = rng.split("airlight");
    for (auto& v : s.airlight) v = a.uniform(0.7, 1.0);
    s.beta_scatter = rng.split("beta").uniform(kBetaMin, kBetaMax);
    Rng d = rng.split("depth");
    s.depth_kind = static_cast<DepthKind>(d.uniform_int(0, 2));
    s.depth = gen_depth(d.split("map"), h, w, s.depth_kind);
    return s;
}

inline HazyCleanPair gen_pair(std::uint64_t seed, std::int64_t h, std::int64_t w) {
    HazyCleanPair p;
    p.clean = gen_clean_image(Rng(seed).split("clean"), h, w);
    p.scene = gen_scene(Rng(seed).split("scene").next_u64(), h, w);
    p.scene.seed = seed;
    p.hazy = synth_haze(p.clean, p.scene);
    return p;
}

// ---------------------------------------------------------------------------
// Geometry on HWC grids (any channel count)

namespace detail {

struct Grid {
    std::int64_t h, w, c;
    std::vector<double> v;
    double at(std::int64_t y, std::int64_t x, std::int64_t ch) const { return v[static_cast<std::size_t>((y * w + x) * c + ch)]; }
};

inline Grid to_grid(const Image& img) { return {img.height(), img.width(), 3, {img.pixels().begin(), img.pixels().end()}}; }
inline Grid to_grid(const Plane& p) { return {p.height, p.width, 1, p.values}; }
inline Image image_of(Grid g) { return Image(g.h, g.w, std::move(g.v)); }
inline Plane plane_of(Grid g) {
    Plane p(g.h, g.w);
    p.values = std::move(g.v);
    return p;
}

/// Bilinear resize with half-pixel centers and edge clamping.
inline Grid resize(const Grid& g, std::int64_t h, std::int64_t w) {
    Grid o{h, w, g.c, std::vector<double>(static_cast<std::size_t>(h * w * g.c))};
    auto src = [](std::int64_t i, std::int64_t in, std::int64_t out) {
        return std::clamp((static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5, 0.0, static_cast<double>(in - 1));
    };
    for (std::int64_t y = 0; y < h; ++y) {
        const double sy = src(y, g.h, h);
        const auto y0 = static_cast<std::int64_t>(sy), y1 = std::min(y0 + 1, g.h - 1);
        const double ty = sy - y0;
        for (std::int64_t x = 0; x < w; ++x) {
            const double sx = src(x, g.w, w);
            const auto x0 = static_cast<std::int64_t>(sx), x1 = std::min(x0 + 1, g.w - 1);
            const double tx = sx - x0;
            for (std::int64_t c = 0; c < g.c; ++c)
                o.v[static_cast<std::size_t>((y * w + x) * g.c + c)] =
                    (1 - ty) * ((1 - tx) * g.at(y0, x0, c) + tx * g.at(y0, x1, c)) + ty * ((1 - tx) * g.at(y1, x0, c) + tx * g.at(y1, x1, c));
        }
    }
    return o;
}

inline Grid crop(const Grid& g, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
    Grid o{h, w, g.c, std::vector<double>(static_cast<std::size_t>(h * w * g.c))};
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t c = 0; c < g.c; ++c) o.v[static_cast<std::size_t>((y * w + x) * g.c + c)] = g.at(y0 + y, x0 + x, c);
    return o;
}

inline Grid flip_h(const Grid& g) {
    Grid o = g;
    for (std::int64_t y = 0; y < g.h; ++y)
        for (std::int64_t x = 0; x < g.w; ++x)
            for (std::int64_t c = 0; c < g.c; ++c) o.v[static_cast<std::size_t>((y * g.w + x) * g.c + c)] = g.at(y, g.w - 1 - x, c);
    return o;
}

/// Rotates 90 degrees counter-clockwise.
inline Grid rot90(const Grid& g) {
    Grid o{g.w, g.h, g.c, std::vector<double>(g.v.size())};
    for (std::int64_t y = 0; y < o.h; ++y)
        for (std::int64_t x = 0; x < o.w; ++x)
            for (std::int64_t c = 0; c < g.c; ++c) o.v[static_cast<std::size_t>((y * o.w + x) * g.c + c)] = g.at(x, g.w - 1 - y, c);
    return o;
}

}  // namespace detail

inline HazyCleanPair flip_h(const HazyCleanPair& p) {
    HazyCleanPair o = p;
    o.clean = detail::image_of(detail::flip_h(detail::to_grid(p.clean)));
    o.hazy = detail::image_of(detail::flip_h(detail::to_grid(p.hazy)));
    o.scene.depth = detail::plane_of(detail::flip_h(detail::to_grid(p.scene.depth)));
    return o;
}

struct AugmentConfig {
    double scale_min = 0.9, scale_max = 1.1;
};

/// Joint random scale, crop, horizontal flip and 90-degree rotation. Clean
/// image and depth are transformed together; the hazy image is then
/// re-synthesized so the scattering model holds exactly on the output.
/// The scale range is clipped from below so that the crop always fits.
inline HazyCleanPair augment(const HazyCleanPair& p, Rng rng, std::int64_t crop, const AugmentConfig& cfg = {}) {
    const auto h = p.clean.height(), w = p.clean.width();
    if (crop > h || crop > w) throw ShapeError("augment: crop " + std::to_string(crop) + " larger than source " + std::to_string(h) + "x" + std::to_string(w));
    const double lo = std::max(cfg.scale_min, static_cast<double>(crop) / static_cast<double>(std::min(h, w)));
    const double s = lo >= cfg.scale_max ? lo : rng.uniform(lo, cfg.scale_max);
    const auto sh = std::max(crop, static_cast<std::int64_t>(std::llround(static_cast<double>(h) * s)));
    const auto sw = std::max(crop, static_cast<std::int64_t>(std::llround(static_cast<double>(w) * s)));
    auto clean = detail::to_grid(p.clean), depth = detail::to_grid(p.scene.depth);
    if (sh != h || sw != w) {
        clean = detail::resize(clean, sh, sw);
        depth = detail::resize(depth, sh, sw);
    }
    const auto y0 = rng.uniform_int(0, sh - crop), x0 = rng.uniform_int(0, sw - crop);
    clean = detail::crop(clean, y0, x0, crop, crop);
    depth = detail::crop(depth, y0, x0, crop, crop);
    if (rng.uniform() < 0.5) {
        clean = detail::flip_h(clean);
        depth = detail::flip_h(depth);
    }
    for (auto k = rng.uniform_int(0, 3); k > 0; --k) {
        clean = detail::rot90(clean);
        depth = detail::rot90(depth);
    }
    HazyCleanPair o;
    o.clean = detail::image_of(std::move(clean));
    o.scene = p.scene;
    o.scene.depth = detail::plane_of(std::move(depth));
    o.hazy = synth_haze(o.clean, o.scene);
    return o;
}

ZID_NAMESPACE_END
