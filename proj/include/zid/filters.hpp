#pragma once

#include <array>
#include <string_view>

#include "zid/image.hpp"

ZID_NAMESPACE_BEGIN

/// High-frequency extraction operators.
enum class HfKind { color_laplacian, gray_laplacian, sobel };

inline HfKind parse_hf_kind(std::string_view s) {
    if (s == "color_laplacian") return HfKind::color_laplacian;
    if (s == "gray_laplacian") return HfKind::gray_laplacian;
    if (s == "sobel") return HfKind::sobel;
    throw ConfigError("unknown high-frequency operator '" + std::string(s) + "'");
}

inline std::string_view to_string(HfKind k) {
    switch (k) {
        case HfKind::color_laplacian: return "color_laplacian";
        case HfKind::gray_laplacian: return "gray_laplacian";
        case HfKind::sobel: return "sobel";
    }
    return "?";
}

/// Separable binomial [1 4 6 4 1]/16 blur with reflect borders, per channel.
inline ColorField gaussian5x5(const ColorField& f) {
    static constexpr std::array<double, 5> k{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    ColorField tmp(f.height, f.width), out(f.height, f.width);
    for (std::int64_t y = 0; y < f.height; ++y)
        for (std::int64_t x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int t = -2; t <= 2; ++t) s += k[t + 2] * f.at(y, reflect_index(x + t, f.width), c);
                tmp.at(y, x, c) = s;
            }
    for (std::int64_t y = 0; y < f.height; ++y)
        for (std::int64_t x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int t = -2; t <= 2; ++t) s += k[t + 2] * tmp.at(reflect_index(y + t, f.height), x, c);
                out.at(y, x, c) = s;
            }
    return out;
}

inline Image gaussian5x5(const Image& img) { return Image::clamped(gaussian5x5(img.field())); }

/// 2x2 block average. Dimensions must be even.
inline ColorField avg_down2(const ColorField& f) {
    if (f.height % 2 || f.width % 2) throw ShapeError("avg_down2: dimensions must be even");
    ColorField out(f.height / 2, f.width / 2);
    for (std::int64_t y = 0; y < out.height; ++y)
        for (std::int64_t x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = 0.25 * (f.at(2 * y, 2 * x, c) + f.at(2 * y, 2 * x + 1, c) + f.at(2 * y + 1, 2 * x, c) + f.at(2 * y + 1, 2 * x + 1, c));
    return out;
}

/// Bilinear x2 upsampling, half-pixel centers with edge clamping.
inline ColorField bilinear_up2(const ColorField& f) {
    ColorField out(f.height * 2, f.width * 2);
    auto tap = [](std::int64_t o, std::int64_t n, std::int64_t& i0, std::int64_t& i1, double& w) {
        double src = std::max((o + 0.5) / 2.0 - 0.5, 0.0);
        i0 = std::min(static_cast<std::int64_t>(src), n - 1);
        i1 = std::min(i0 + 1, n - 1);
        w = src - static_cast<double>(i0);
    };
    for (std::int64_t y = 0; y < out.height; ++y) {
        std::int64_t y0, y1;
        double wy;
        tap(y, f.height, y0, y1, wy);
        for (std::int64_t x = 0; x < out.width; ++x) {
            std::int64_t x0, x1;
            double wx;
            tap(x, f.width, x0, x1, wx);
            for (int c = 0; c < 3; ++c) {
                const double top = f.at(y0, x0, c) * (1 - wx) + f.at(y0, x1, c) * wx;
                const double bot = f.at(y1, x0, c) * (1 - wx) + f.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

/// Low-pass reconstruction Up(Down(G(f))). Odd extents are reflect-padded
/// to even and cropped back.
inline ColorField pyramid_lowpass(const ColorField& f) {
    const std::int64_t ph = f.height % 2, pw = f.width % 2;
    const ColorField src = (ph || pw) ? reflect_pad(f, ph, pw) : f;
    ColorField low = bilinear_up2(avg_down2(gaussian5x5(src)));
    return (ph || pw) ? crop(low, 0, 0, f.height, f.width) : low;
}

/// Signed single-octave Laplacian residual f - Up(Down(G(f))), per channel.
inline ColorField laplacian_residual(const ColorField& f) {
    ColorField low = pyramid_lowpass(f);
    ColorField out(f.height, f.width);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = f.values[i] - low.values[i];
    return out;
}

inline ColorField laplacian_residual(const Image& img) { return laplacian_residual(img.field()); }

/// ITU-R BT.601 luma.
inline double luma601(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

/// Per-channel Sobel gradient magnitude with reflect borders.
inline ColorField sobel_magnitude(const ColorField& f) {
    ColorField out(f.height, f.width);
    for (std::int64_t y = 0; y < f.height; ++y)
        for (std::int64_t x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c) {
                auto p = [&](std::int64_t dy, std::int64_t dx) { return f.at(reflect_index(y + dy, f.height), reflect_index(x + dx, f.width), c); };
                const double gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
                const double gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
                out.at(y, x, c) = std::sqrt(gx * gx + gy * gy);
            }
    return out;
}

inline ColorField hf_operator(const Image& img, HfKind kind) {
    switch (kind) {
        case HfKind::color_laplacian: return laplacian_residual(img.field());
        case HfKind::gray_laplacian: {
            ColorField gray(img.height(), img.width());
            for (std::int64_t y = 0; y < img.height(); ++y)
                for (std::int64_t x = 0; x < img.width(); ++x) {
                    const double l = luma601(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
                    for (int c = 0; c < 3; ++c) gray.at(y, x, c) = l;
                }
            return laplacian_residual(gray);
        }
        case HfKind::sobel: return sobel_magnitude(img.field());
    }
    throw ConfigError("unknown high-frequency operator");
}

ZID_NAMESPACE_END
