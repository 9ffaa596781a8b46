#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "zid/filters.hpp"

ZID_NAMESPACE_BEGIN

inline constexpr double kPsnrCap = 99.0;

struct MetricReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
    double delta_e_ab = 0.0;
    double delta_e_00 = 0.0;
};

namespace detail {
inline void require_same_size(const Image& a, const Image& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ShapeError(std::string(what) + ": image sizes differ (" + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                         std::to_string(b.height()) + "x" + std::to_string(b.width()) + ")");
}
}  // namespace detail

/// 10 log10(peak^2 / MSE) over all pixels and channels; 99 dB on zero MSE.
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
    detail::require_same_size(a, b, "psnr");
    double se = 0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) {
        const double d = a.pixels()[i] - b.pixels()[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.pixels().size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

// ---------------------------------------------------------------------------
// SSIM: single scale, 11x11 Gaussian window (sigma 1.5), luminance channel,
// mean over valid window positions.

inline constexpr int kSsimWindow = 11;

inline std::array<double, kSsimWindow> ssim_kernel_1d() {
    std::array<double, kSsimWindow> k{};
    double s = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
        s += k[i];
    }
    for (auto& v : k) v /= s;
    return k;
}

inline std::vector<double> luminance(const Image& img) {
    std::vector<double> y(static_cast<std::size_t>(img.height() * img.width()));
    for (std::int64_t r = 0; r < img.height(); ++r)
        for (std::int64_t c = 0; c < img.width(); ++c) y[r * img.width() + c] = luma601(img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2));
    return y;
}

inline double ssim(const Image& a, const Image& b) {
    detail::require_same_size(a, b, "ssim");
    const std::int64_t H = a.height(), W = a.width();
    if (H < kSsimWindow || W < kSsimWindow)
        throw ShapeError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) + " smaller than the 11x11 window");
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const auto k = ssim_kernel_1d();
    const auto ya = luminance(a), yb = luminance(b);
    const std::int64_t Ho = H - kSsimWindow + 1, Wo = W - kSsimWindow + 1;
    // Horizontal pass then vertical pass for the five moment maps.
    std::array<std::vector<double>, 5> hpass;
    for (auto& v : hpass) v.assign(static_cast<std::size_t>(H * Wo), 0.0);
    for (std::int64_t r = 0; r < H; ++r)
        for (std::int64_t c = 0; c < Wo; ++c) {
            double s[5] = {0, 0, 0, 0, 0};
            for (int t = 0; t < kSsimWindow; ++t) {
                const double u = ya[r * W + c + t], v = yb[r * W + c + t], w = k[t];
                s[0] += w * u;
                s[1] += w * v;
                s[2] += w * u * u;
                s[3] += w * v * v;
                s[4] += w * u * v;
            }
            for (int m = 0; m < 5; ++m) hpass[m][r * Wo + c] = s[m];
        }
    double total = 0;
    for (std::int64_t r = 0; r < Ho; ++r)
        for (std::int64_t c = 0; c < Wo; ++c) {
            double s[5] = {0, 0, 0, 0, 0};
            for (int t = 0; t < kSsimWindow; ++t)
                for (int m = 0; m < 5; ++m) s[m] += k[t] * hpass[m][(r + t) * Wo + c];
            const double mu_a = s[0], mu_b = s[1];
            const double var_a = s[2] - mu_a * mu_a, var_b = s[3] - mu_b * mu_b, cov = s[4] - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
        }
    return total / static_cast<double>(Ho * Wo);
}

// ---------------------------------------------------------------------------
// Color: sRGB (D65) -> CIELAB, Delta E*ab and CIEDE2000.

struct Lab {
    double L, a, b;
};

inline double srgb_to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

inline Lab rgb_to_lab(double r, double g, double b) {
    static constexpr double M[3][3] = {{0.4124564, 0.3575761, 0.1804375}, {0.2126729, 0.7151522, 0.0721750}, {0.0193339, 0.1191920, 0.9503041}};
    // Reference white is the image of RGB (1,1,1), so white maps to a* = b* = 0.
    static constexpr double Xn = M[0][0] + M[0][1] + M[0][2];
    static constexpr double Yn = M[1][0] + M[1][1] + M[1][2];
    static constexpr double Zn = M[2][0] + M[2][1] + M[2][2];
    const double rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
    const double X = M[0][0] * rl + M[0][1] * gl + M[0][2] * bl;
    const double Y = M[1][0] * rl + M[1][1] * gl + M[1][2] * bl;
    const double Z = M[2][0] * rl + M[2][1] * gl + M[2][2] * bl;
    constexpr double d = 6.0 / 29.0;
    auto f = [&](double t) { return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0; };
    const double fx = f(X / Xn), fy = f(Y / Yn), fz = f(Z / Zn);
    return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

/// Per-pixel CIELAB planes (HWC order: L, a, b).
inline ColorField rgb_to_lab(const Image& img) {
    ColorField out(img.height(), img.width());
    for (std::int64_t y = 0; y < img.height(); ++y)
        for (std::int64_t x = 0; x < img.width(); ++x) {
            const Lab l = rgb_to_lab(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
            out.at(y, x, 0) = l.L;
            out.at(y, x, 1) = l.a;
            out.at(y, x, 2) = l.b;
        }
    return out;
}

inline double delta_e_ab(const Lab& p, const Lab& q) {
    return std::sqrt((p.L - q.L) * (p.L - q.L) + (p.a - q.a) * (p.a - q.a) + (p.b - q.b) * (p.b - q.b));
}

/// CIEDE2000 colour difference with kL = kC = kH = 1.
inline double delta_e_00(const Lab& p, const Lab& q) {
    constexpr double pi = std::numbers::pi;
    constexpr double deg = pi / 180.0;
    const double C1 = std::hypot(p.a, p.b), C2 = std::hypot(q.a, q.b);
    const double Cbar = 0.5 * (C1 + C2);
    const double Cbar7 = std::pow(Cbar, 7);
    const double G = 0.5 * (1 - std::sqrt(Cbar7 / (Cbar7 + std::pow(25.0, 7))));
    const double a1 = (1 + G) * p.a, a2 = (1 + G) * q.a;
    const double Cp1 = std::hypot(a1, p.b), Cp2 = std::hypot(a2, q.b);
    auto hue = [&](double b, double a) {
        if (a == 0 && b == 0) return 0.0;
        double h = std::atan2(b, a);
        if (h < 0) h += 2 * pi;
        return h;
    };
    const double h1 = hue(p.b, a1), h2 = hue(q.b, a2);
    const double dL = q.L - p.L, dC = Cp2 - Cp1;
    double dh = 0;
    if (Cp1 * Cp2 != 0) {
        dh = h2 - h1;
        if (dh > pi) dh -= 2 * pi;
        else if (dh < -pi) dh += 2 * pi;
    }
    const double dH = 2 * std::sqrt(Cp1 * Cp2) * std::sin(dh / 2);
    const double Lbar = 0.5 * (p.L + q.L), Cpbar = 0.5 * (Cp1 + Cp2);
    double hbar = h1 + h2;
    if (Cp1 * Cp2 != 0) {
        if (std::abs(h1 - h2) <= pi) hbar = 0.5 * (h1 + h2);
        else if (h1 + h2 < 2 * pi) hbar = 0.5 * (h1 + h2 + 2 * pi);
        else hbar = 0.5 * (h1 + h2 - 2 * pi);
    }
    const double T = 1 - 0.17 * std::cos(hbar - 30 * deg) + 0.24 * std::cos(2 * hbar) + 0.32 * std::cos(3 * hbar + 6 * deg) -
                     0.20 * std::cos(4 * hbar - 63 * deg);
    const double dtheta = 30 * deg * std::exp(-std::pow((hbar / deg - 275) / 25, 2));
    const double Cpbar7 = std::pow(Cpbar, 7);
    const double Rc = 2 * std::sqrt(Cpbar7 / (Cpbar7 + std::pow(25.0, 7)));
    const double Lb50 = (Lbar - 50) * (Lbar - 50);
    const double Sl = 1 + 0.015 * Lb50 / std::sqrt(20 + Lb50);
    const double Sc = 1 + 0.045 * Cpbar;
    const double Sh = 1 + 0.015 * Cpbar * T;
    const double Rt = -std::sin(2 * dtheta) * Rc;
    const double tl = dL / Sl, tc = dC / Sc, th = dH / Sh;
    return std::sqrt(tl * tl + tc * tc + th * th + Rt * tc * th);
}

namespace detail {
template <class Dist>
double mean_lab_distance(const Image& a, const Image& b, Dist dist) {
    const ColorField la = rgb_to_lab(a), lb = rgb_to_lab(b);
    double s = 0;
    for (std::size_t i = 0; i < la.values.size(); i += 3)
        s += dist(Lab{la.values[i], la.values[i + 1], la.values[i + 2]}, Lab{lb.values[i], lb.values[i + 1], lb.values[i + 2]});
    return s / static_cast<double>(a.height() * a.width());
}
}  // namespace detail

/// Mean per-pixel Euclidean CIELAB distance.
inline double delta_e_ab(const Image& a, const Image& b) {
    detail::require_same_size(a, b, "delta_e_ab");
    return detail::mean_lab_distance(a, b, [](const Lab& p, const Lab& q) { return delta_e_ab(p, q); });
}

/// Mean per-pixel CIEDE2000 distance.
inline double delta_e_00(const Image& a, const Image& b) {
    detail::require_same_size(a, b, "delta_e_00");
    return detail::mean_lab_distance(a, b, [](const Lab& p, const Lab& q) { return delta_e_00(p, q); });
}

/// All four metrics. SSIM needs both sides >= 11 pixels.
inline MetricReport compute_metrics(const Image& pred, const Image& ref) {
    return {psnr(pred, ref), ssim(pred, ref), delta_e_ab(pred, ref), delta_e_00(pred, ref)};
}

ZID_NAMESPACE_END
