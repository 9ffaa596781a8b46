#pragma once

#include <numbers>

#include "zid/image.hpp"
#include "zid/nn.hpp"

ZID_NAMESPACE_BEGIN

/// Linear beta schedule with cumulative products, indexed by t in [1, T].
class DiffusionSchedule {
public:
    DiffusionSchedule(int T, double beta_start, double beta_end) {
        if (T < 1) throw ConfigError("diffusion T must be >= 1");
        if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
            throw ConfigError("diffusion betas must satisfy 0 < start <= end < 1 (got " + std::to_string(beta_start) + ", " +
                              std::to_string(beta_end) + ")");
        beta_.resize(static_cast<std::size_t>(T));
        alpha_bar_.resize(static_cast<std::size_t>(T));
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double b = T == 1 ? beta_start : beta_start + (t - 1) / static_cast<double>(T - 1) * (beta_end - beta_start);
            prod *= 1.0 - b;
            beta_[t - 1] = b;
            alpha_bar_[t - 1] = prod;
        }
    }

    int T() const { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_.at(check(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(check(t)); }

private:
    std::size_t check(int t) const {
        if (t < 1 || t > T()) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
        return static_cast<std::size_t>(t - 1);
    }
    std::vector<double> beta_, alpha_bar_;
};

inline DiffusionSchedule build_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    return DiffusionSchedule(T, beta_start, beta_end);
}

struct SeverityConfig {
    int t_low = 200;
    double gamma = 0.8;
};

/// Per-sample mean |I_h - I_c| and its batch min-max normalization.
struct Severity {
    std::vector<double> raw, normalized;
};

inline Severity severity_scores(std::span<const Image> hazy, std::span<const Image> clean) {
    if (hazy.size() != clean.size() || hazy.empty()) throw ShapeError("severity_scores: need equal, non-empty batches");
    Severity s;
    for (std::size_t i = 0; i < hazy.size(); ++i) {
        if (hazy[i].height() != clean[i].height() || hazy[i].width() != clean[i].width()) throw ShapeError("severity_scores: pair size mismatch");
        double acc = 0;
        const auto a = hazy[i].pixels(), b = clean[i].pixels();
        for (std::size_t k = 0; k < a.size(); ++k) acc += std::abs(a[k] - b[k]);
        s.raw.push_back(acc / static_cast<double>(a.size()));
    }
    const auto [lo, hi] = std::minmax_element(s.raw.begin(), s.raw.end());
    for (double v : s.raw) s.normalized.push_back((v - *lo) / (*hi - *lo + 1e-12));
    return s;
}

/// T_cap = round-half-up(T_low + gamma * s_norm * (T - T_low)), within [T_low, T].
inline std::vector<int> severity_caps(const std::vector<double>& s_norm, const SeverityConfig& cfg, int T) {
    if (cfg.t_low < 1 || cfg.t_low > T) throw ConfigError("severity t_low must lie in [1, T]");
    if (!(cfg.gamma >= 0 && cfg.gamma <= 1)) throw ConfigError("severity gamma must lie in [0, 1]");
    std::vector<int> caps;
    for (double s : s_norm) {
        const double raw = cfg.t_low + cfg.gamma * std::clamp(s, 0.0, 1.0) * (T - cfg.t_low);
        caps.push_back(std::clamp(static_cast<int>(std::floor(raw + 0.5)), cfg.t_low, T));
    }
    return caps;
}

/// Uniform integer timesteps in [1, cap] per sample.
inline std::vector<int> sample_timesteps(const std::vector<int>& caps, Rng& rng) {
    std::vector<int> t;
    for (int c : caps) {
        if (c < 1) throw ConfigError("timestep cap must be >= 1");
        t.push_back(static_cast<int>(rng.uniform_int(1, c)));
    }
    return t;
}

inline Tensor normal_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.normal());
    return t;
}

/// R_t = sqrt(alpha_bar_t) R + sqrt(1 - alpha_bar_t) eps, per batch item.
/// R and eps are data; the result carries no gradient.
inline Tensor forward_diffuse(const Tensor& r, const std::vector<int>& t, const Tensor& eps, const DiffusionSchedule& sched) {
    if (r.shape() != eps.shape()) throw ShapeError("forward_diffuse: R " + shape_str(r.shape()) + " vs eps " + shape_str(eps.shape()));
    if (static_cast<std::int64_t>(t.size()) != r.dim(0)) throw ShapeError("forward_diffuse: one timestep per batch item required");
    const std::int64_t per = r.numel() / r.dim(0);
    std::vector<Real> out(static_cast<std::size_t>(r.numel()));
    for (std::int64_t b = 0; b < r.dim(0); ++b) {
        const double ab = sched.alpha_bar(t[static_cast<std::size_t>(b)]);
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        for (std::int64_t i = b * per; i < (b + 1) * per; ++i)
            out[static_cast<std::size_t>(i)] = static_cast<Real>(sa * static_cast<double>(r[i]) + sn * static_cast<double>(eps[i]));
    }
    return Tensor(r.shape(), std::move(out));
}

/// Interleaved (sin(t w_k), cos(t w_k)) with w_k = 10000^(-2k/dim).
inline std::vector<double> sinusoidal_embed(double t, int dim) {
    if (dim <= 0 || dim % 2) throw ConfigError("embedding dim must be positive and even");
    std::vector<double> e(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim / 2; ++k) {
        const double w = std::pow(10000.0, -2.0 * k / dim);
        e[2 * k] = std::sin(t * w);
        e[2 * k + 1] = std::cos(t * w);
    }
    return e;
}

inline Tensor embed_timesteps(const std::vector<int>& t, int dim) {
    std::vector<Real> v;
    v.reserve(t.size() * static_cast<std::size_t>(dim));
    for (int ti : t)
        for (double x : sinusoidal_embed(ti, dim)) v.push_back(static_cast<Real>(x));
    return Tensor(Shape{static_cast<std::int64_t>(t.size()), dim}, std::move(v));
}

// ---------------------------------------------------------------------------
// Conditional noise predictor (training only). Every parameter lives under
// `zipph.` and every op is tagged with the "zipph" owner.

struct ZipphConfig {
    std::int64_t cond_channels = 8;
    int embed_dim = 128;
    std::int64_t base_width = 16;
};

inline constexpr std::string_view kZipphOwner = "zipph";

class Zipph {
public:
    Zipph(ParamStore& ps, const Rng& rng, std::int64_t bottleneck, ZipphConfig cfg = {}) : cfg_(cfg) {
        if (cfg.cond_channels < 1 || cfg.base_width < 1) throw ConfigError("zipph widths must be positive");
        const Rng r = rng.split("zipph");
        const auto w0 = cfg.base_width, w1 = 2 * w0, w2 = 4 * w0, te = 4 * w0;
        cond_full = Conv2d(ps, r, "zipph.cond_full", bottleneck, cfg.cond_channels, 1);
        cond_half = Conv2d(ps, r, "zipph.cond_half", bottleneck, w1, 1);
        time1 = Linear(ps, r, "zipph.time.fc1", cfg.embed_dim, te);
        time2 = Linear(ps, r, "zipph.time.fc2", te, te);
        enc0 = Conv2d(ps, r, "zipph.enc0", 3 + cfg.cond_channels, w0, 3);
        enc1 = Conv2d(ps, r, "zipph.enc1", w0, w1, 3, 2);
        enc2 = Conv2d(ps, r, "zipph.enc2", w1, w2, 3, 2);
        dec1 = Conv2d(ps, r, "zipph.dec1", w2 + w1, w1, 3);
        dec0 = Conv2d(ps, r, "zipph.dec0", w1 + w0, w0, 3);
        out = Conv2d(ps, r, "zipph.out", w0, 3, 3);
        const std::int64_t widths[5] = {w0, w1, w2, w1, w0};
        const char* names[5] = {"enc0", "enc1", "enc2", "dec1", "dec0"};
        for (int i = 0; i < 5; ++i) {
            norm[i] = InstanceNorm(ps, std::string("zipph.") + names[i] + ".norm", widths[i]);
            time_proj[i] = Linear(ps, r, std::string("zipph.") + names[i] + ".time", te, widths[i]);
        }
    }

    /// Predicts the injected noise from R_t, conditioned on t and F̂_b.
    Tensor operator()(const Tensor& r_t, const std::vector<int>& t, const Tensor& fb_hat) const {
        OwnerScope owner(kZipphOwner);
        const auto H = r_t.dim(2), W = r_t.dim(3);
        if (fb_hat.dim(0) != r_t.dim(0) || fb_hat.dim(2) * 16 != H || fb_hat.dim(3) * 16 != W)
            throw ShapeError("zipph: condition " + shape_str(fb_hat.shape()) + " does not match input " + shape_str(r_t.shape()));
        if (H % 4 || W % 4) throw ShapeError("zipph: input size must be divisible by 4");
        Tensor temb = time2(gelu(time1(embed_timesteps(t, cfg_.embed_dim))));
        // Point-wise projection commutes with bilinear upsampling, so project first.
        Tensor cond = bilinear_upsample(cond_full(fb_hat), 16);
        auto stage = [&](int i, const Conv2d& conv, const Tensor& x) { return leaky_relu(norm[i](conv(x))) + as_planes(time_proj[i](temb)); };
        Tensor e0 = stage(0, enc0, concat({r_t, cond}, 1));
        Tensor e1 = stage(1, enc1, e0) + bilinear_upsample(cond_half(fb_hat), 8);
        Tensor e2 = stage(2, enc2, e1);
        Tensor d1 = stage(3, dec1, concat({bilinear_upsample(e2, 2), e1}, 1));
        Tensor d0 = stage(4, dec0, concat({bilinear_upsample(d1, 2), e0}, 1));
        return out(d0);
    }

    Conv2d cond_full, cond_half, enc0, enc1, enc2, dec1, dec0, out;
    Linear time1, time2;
    std::array<InstanceNorm, 5> norm;
    std::array<Linear, 5> time_proj;

private:
    ZipphConfig cfg_;
};

ZID_NAMESPACE_END
