#pragma once

#include <array>
#include <map>

#include "zid/filters.hpp"
#include "zid/nn.hpp"

ZID_NAMESPACE_BEGIN

struct BackboneConfig {
    std::int64_t base_channels = 8;
    std::int64_t num_lgcb = 4;
    double gdfn_expansion = 2.0;
    std::int64_t se_reduction = 8;
    std::int64_t cslm_mlp_reduction = 4;
    HfKind hf_kind = HfKind::color_laplacian;

    std::int64_t width(int stage) const { return base_channels << stage; }
    std::int64_t bottleneck() const { return 16 * base_channels; }
    std::int64_t gdfn_hidden() const {
        return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(gdfn_expansion * static_cast<double>(bottleneck()))));
    }

    void validate() const {
        if (base_channels < 1) throw ConfigError("base_channels must be positive");
        if (num_lgcb < 1) throw ConfigError("num_lgcb must be positive");
        if (!(gdfn_expansion > 0)) throw ConfigError("gdfn_expansion must be positive");
        if (se_reduction < 1) throw ConfigError("se_reduction must be positive");
        if (cslm_mlp_reduction < 1) throw ConfigError("cslm_mlp_reduction must be positive");
    }
};

inline void require_divisible_by_16(std::int64_t h, std::int64_t w) {
    if (h % 16 || w % 16 || h <= 0 || w <= 0)
        throw ShapeError("input size " + std::to_string(h) + "x" + std::to_string(w) + " must be a positive multiple of 16");
}

/// Copy of `x` clamped to [0, 1], outside the autodiff graph.
inline Tensor clamp01(const Tensor& x) {
    std::vector<Real> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = std::clamp(e, Real(0), Real(1));
    return Tensor(x.shape(), std::move(v));
}

// ---------------------------------------------------------------------------
// Semantic context encoder

struct Scb {
    Conv2d proj;
    InstanceNorm proj_norm;
    std::array<ResBlock, 4> res;
    std::array<Conv2d, 4> down;

    struct Output {
        std::array<Tensor, 4> s;
        Tensor fb;
    };

    Scb() = default;
    Scb(ParamStore& ps, const Rng& rng, const BackboneConfig& cfg)
        : proj(ps, rng, "scb.proj", 3, cfg.width(0), 3), proj_norm(ps, "scb.proj.norm", cfg.width(0)) {
        for (int i = 0; i < 4; ++i) {
            const std::string p = "scb.stage" + std::to_string(i + 1);
            res[i] = ResBlock(ps, rng, p + ".res", cfg.width(i));
            down[i] = Conv2d(ps, rng, p + ".down", cfg.width(i), cfg.width(i + 1), 3, 2);
        }
    }

    Output operator()(const Tensor& x) const {
        Output o;
        Tensor h = leaky_relu(proj_norm(proj(x)));
        o.s[0] = h;
        for (int i = 0; i < 4; ++i) {
            h = down[i](res[i](h));
            if (i < 3) o.s[i + 1] = h;
        }
        o.fb = h;
        return o;
    }
};

// ---------------------------------------------------------------------------
// Lightweight global context block: channel-transposed attention + GDFN.
// Projections carry no bias, so the attention map is invariant to input scale.

struct Lgcb {
    Conv2d qkv_pw, qkv_dw, proj_out, ffn_in, ffn_dw, ffn_out;
    Tensor log_tau;

    Lgcb() = default;
    Lgcb(ParamStore& ps, const Rng& rng, const std::string& name, const BackboneConfig& cfg)
        : Lgcb(ps, rng, name, cfg.bottleneck(), cfg.gdfn_hidden()) {}
    /// Explicit widths: `cb` channels in and out, `hid` GDFN hidden channels.
    Lgcb(ParamStore& ps, const Rng& rng, const std::string& name, std::int64_t cb, std::int64_t hid) {
        qkv_pw = Conv2d(ps, rng, name + ".qkv_pw", cb, 3 * cb, 1, 1, 1, false);
        qkv_dw = Conv2d(ps, rng, name + ".qkv_dw", 3 * cb, 3 * cb, 3, 1, 3 * cb, false);
        proj_out = Conv2d(ps, rng, name + ".proj_out", cb, cb, 1, 1, 1, false);
        log_tau = ps.add(name + ".log_tau", Shape{1});
        ffn_in = Conv2d(ps, rng, name + ".ffn_in", cb, 2 * hid, 1, 1, 1, false);
        ffn_dw = Conv2d(ps, rng, name + ".ffn_dw", 2 * hid, 2 * hid, 3, 1, 2 * hid, false);
        ffn_out = Conv2d(ps, rng, name + ".ffn_out", hid, cb, 1, 1, 1, false);
    }

    std::array<Tensor, 3> qkv(const Tensor& x) const {
        if (x.dim(1) != qkv_pw.weight.dim(1))
            throw ShapeError("lgcb: input width " + std::to_string(x.dim(1)) + " != bottleneck width " + std::to_string(qkv_pw.weight.dim(1)));
        auto parts = split(qkv_dw(qkv_pw(x)), 1, 3);
        return {parts[0], parts[1], parts[2]};
    }

    /// Row-stochastic Cb x Cb map softmax(K̄ Q̄ᵀ / tau), per batch item.
    Tensor attention_matrix(const Tensor& q, const Tensor& k) const {
        const Shape flat{q.dim(0), q.dim(1), q.dim(2) * q.dim(3)};
        Tensor qn = l2_normalize_dim(reshape(q, flat), -1);
        Tensor kn = l2_normalize_dim(reshape(k, flat), -1);
        Tensor logits = matmul_batched(kn, transpose_last2(qn));
        return softmax_dim(logits * exp(scale(log_tau, Real(-1))), -1);
    }

    Tensor attention(const Tensor& x, const Tensor& q, const Tensor& k, const Tensor& v) const {
        Tensor a = attention_matrix(q, k);
        Tensor av = matmul_batched(a, reshape(v, Shape{v.dim(0), v.dim(1), v.dim(2) * v.dim(3)}));
        return x + proj_out(reshape(av, v.shape()));
    }

    Tensor gdfn(const Tensor& x) const {
        auto u = split(ffn_dw(ffn_in(x)), 1, 2);
        return x + ffn_out(gelu(u[0]) * u[1]);
    }

    Tensor operator()(const Tensor& x) const {
        auto [q, k, v] = qkv(x);
        return gdfn(attention(x, q, k, v));
    }
};

// ---------------------------------------------------------------------------
// Color-aware structural encoder (Laplacian mask + stride-2 hierarchy)

struct Cslm {
    Conv2d proj, adapt, spatial;
    Linear mlp1, mlp2;
    std::array<Conv2d, 3> down;
    std::array<InstanceNorm, 3> down_norm;

    struct Output {
        Tensor x, gated;
        std::array<Tensor, 4> c;
    };

    Cslm() = default;
    Cslm(ParamStore& ps, const Rng& rng, const BackboneConfig& cfg) {
        const auto c = cfg.width(0);
        const auto hidden = std::max<std::int64_t>(1, c / cfg.cslm_mlp_reduction);
        proj = Conv2d(ps, rng, "cslm.proj", 3, c, 3);
        adapt = Conv2d(ps, rng, "cslm.adapt", c, c, 1);
        mlp1 = Linear(ps, rng, "cslm.mlp1", c, hidden);
        mlp2 = Linear(ps, rng, "cslm.mlp2", hidden, c);
        spatial = Conv2d(ps, rng, "cslm.spatial", 2, 1, 7);
        for (int i = 0; i < 3; ++i) {
            const std::string p = "cslm.down" + std::to_string(i + 1);
            down[i] = Conv2d(ps, rng, p, cfg.width(i), cfg.width(i + 1), 3, 2);
            down_norm[i] = InstanceNorm(ps, p + ".norm", cfg.width(i + 1));
        }
    }

    Output operator()(const Tensor& hf) const {
        Output o;
        o.x = adapt(proj(hf));
        const auto B = o.x.dim(0), C = o.x.dim(1);
        Tensor mc = as_planes(mlp2(relu(mlp1(reshape(global_avg_pool(o.x), Shape{B, C})))));
        Tensor ms = spatial(concat({mean_dim(o.x, 1), max_dim(o.x, 1)}, 1));
        o.gated = o.x + o.x * sigmoid(mc * ms);
        o.c[0] = o.gated;
        for (int i = 0; i < 3; ++i) o.c[i + 1] = leaky_relu(down_norm[i](down[i](o.c[i])));
        return o;
    }
};

// ---------------------------------------------------------------------------
// Dynamic feature arbitration: fuse upsampled decoder, semantic and
// structural streams, reweight with squeeze-and-excitation, refine.

struct Dfab {
    Conv2d fuse;
    Linear se1, se2;
    ResBlock res;
    bool se_bypass = false;  // test hook: forces the SE scale to 1

    Dfab() = default;
    Dfab(ParamStore& ps, const Rng& rng, const std::string& name, std::int64_t w, std::int64_t w_next, std::int64_t se_reduction) {
        const auto hidden = std::max<std::int64_t>(1, w / se_reduction);
        fuse = Conv2d(ps, rng, name + ".fuse", w_next + 2 * w, w, 1);
        se1 = Linear(ps, rng, name + ".se1", w, hidden);
        se2 = Linear(ps, rng, name + ".se2", hidden, w);
        res = ResBlock(ps, rng, name + ".res", w);
    }

    Tensor operator()(const Tensor& d_next, const Tensor& s, const Tensor& c) const {
        Tensor up = bilinear_upsample(d_next, 2);
        for (int ax : {0, 2, 3})
            if (up.dim(ax) != s.dim(ax) || up.dim(ax) != c.dim(ax))
                throw ShapeError("dfab: stream dimension " + std::to_string(ax) + " differs (" + shape_str(up.shape()) + ", " +
                                 shape_str(s.shape()) + ", " + shape_str(c.shape()) + ")");
        Tensor z = fuse(concat({up, s, c}, 1));
        if (se_bypass) return res(z);
        const auto B = z.dim(0), C = z.dim(1);
        Tensor w = sigmoid(se2(relu(se1(reshape(global_avg_pool(z), Shape{B, C})))));
        return res(z * as_planes(w));
    }
};

// ---------------------------------------------------------------------------

enum class Mode { training, inference };

struct BackboneOutput {
    Tensor image;   // Î: unclamped in training mode, clamped in inference mode
    Tensor fb_hat;  // refined bottleneck shared with the training-only heads
};

/// The deterministic dehazing network.
class Backbone {
public:
    Backbone(ParamStore& ps, const Rng& rng, BackboneConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const Rng r = rng.split("backbone");
        scb = Scb(ps, r, cfg_);
        for (std::int64_t i = 0; i < cfg_.num_lgcb; ++i) lgcb.emplace_back(ps, r, "lgcb." + std::to_string(i), cfg_);
        cslm = Cslm(ps, r, cfg_);
        for (int i = 0; i < 4; ++i) dfab[i] = Dfab(ps, r, "dfab." + std::to_string(i), cfg_.width(i), cfg_.width(i + 1), cfg_.se_reduction);
        head = Conv2d(ps, r, "head", cfg_.width(0), 3, 3);
    }

    const BackboneConfig& config() const { return cfg_; }

    Tensor lgcb_stack(const Tensor& fb) const {
        Tensor h = fb;
        for (const auto& b : lgcb) h = b(h);
        return h;
    }

    /// Runs the network on a hazy batch and its high-frequency residual.
    BackboneOutput forward(const Tensor& hazy, const Tensor& hf, Mode mode) const {
        if (hazy.rank() != 4 || hazy.dim(1) != 3) throw ShapeError("backbone: expected [B,3,H,W], got " + shape_str(hazy.shape()));
        if (hf.shape() != hazy.shape()) throw ShapeError("backbone: residual shape " + shape_str(hf.shape()) + " != " + shape_str(hazy.shape()));
        require_divisible_by_16(hazy.dim(2), hazy.dim(3));
        auto sem = scb(hazy);
        Tensor d = lgcb_stack(sem.fb);
        BackboneOutput out;
        out.fb_hat = d;
        auto st = cslm(hf);
        for (int i = 3; i >= 0; --i) d = dfab[i](d, sem.s[i], st.c[i]);
        out.image = head(d);
        if (mode == Mode::inference) out.image = clamp01(out.image);
        return out;
    }

    /// Single-image inference: computes the residual, runs without gradients, clamps.
    Image infer(const Image& hazy) const {
        NoGradGuard ng;
        const Image one[] = {hazy};
        const ColorField hf[] = {hf_operator(hazy, cfg_.hf_kind)};
        return tensor_to_image(forward(images_to_tensor(one), fields_to_tensor(hf), Mode::inference).image);
    }

    Scb scb;
    std::vector<Lgcb> lgcb;
    Cslm cslm;
    std::array<Dfab, 4> dfab;
    Conv2d head;

private:
    BackboneConfig cfg_;
};

/// Stacks per-image high-frequency residuals into [B,3,H,W].
inline Tensor hf_tensor(std::span<const Image> imgs, HfKind kind) {
    std::vector<ColorField> fs;
    fs.reserve(imgs.size());
    for (const auto& i : imgs) fs.push_back(hf_operator(i, kind));
    return fields_to_tensor(fs);
}

// ---------------------------------------------------------------------------
// Symbolic multiply-accumulate accounting (batch 1).

inline std::uint64_t conv_macs(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t groups, std::int64_t ho, std::int64_t wo) {
    return static_cast<std::uint64_t>(co * (ci / groups) * k * k * ho * wo);
}

struct MacReport {
    std::map<std::string, std::uint64_t> modules;  // scb, lgcb, cslm, dfab, head
    std::uint64_t total = 0;
    std::uint64_t lgcb_attention = 0;     // K̄Q̄ᵀ and A·V̄ products, all blocks
    std::uint64_t spatial_attention = 0;  // dense N x N attention on the same tensors
    std::uint64_t lgcb_block = 0;         // one full block
};

inline std::uint64_t lgcb_block_macs(const BackboneConfig& cfg, std::int64_t n) {
    const auto cb = cfg.bottleneck(), hid = cfg.gdfn_hidden();
    const std::uint64_t N = static_cast<std::uint64_t>(n), Cb = static_cast<std::uint64_t>(cb), H2 = static_cast<std::uint64_t>(2 * hid);
    return 3 * Cb * Cb * N        // point-wise to 3Cb
           + 3 * Cb * 9 * N       // depth-wise 3x3
           + 2 * Cb * Cb * N      // K̄Q̄ᵀ and A·V̄
           + Cb * Cb * N          // output projection
           + Cb * H2 * N          // GDFN expand
           + H2 * 9 * N           // GDFN depth-wise
           + (H2 / 2) * Cb * N;   // GDFN contract
}

inline MacReport count_macs(const BackboneConfig& cfg, std::int64_t h, std::int64_t w) {
    cfg.validate();
    require_divisible_by_16(h, w);
    MacReport r;
    auto res_block = [](std::int64_t c, std::int64_t hh, std::int64_t ww) { return 2 * conv_macs(c, c, 3, 1, hh, ww); };
    std::uint64_t scb = conv_macs(3, cfg.width(0), 3, 1, h, w);
    for (int i = 0; i < 4; ++i) {
        const auto hh = h >> i, ww = w >> i;
        scb += res_block(cfg.width(i), hh, ww) + conv_macs(cfg.width(i), cfg.width(i + 1), 3, 1, hh / 2, ww / 2);
    }
    const std::int64_t n = (h / 16) * (w / 16);
    const auto cb = static_cast<std::uint64_t>(cfg.bottleneck());
    r.lgcb_block = lgcb_block_macs(cfg, n);
    r.lgcb_attention = static_cast<std::uint64_t>(cfg.num_lgcb) * 2 * cb * cb * static_cast<std::uint64_t>(n);
    r.spatial_attention = static_cast<std::uint64_t>(cfg.num_lgcb) * 2 * static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n) * cb;

    const auto c0 = cfg.width(0), hidden = std::max<std::int64_t>(1, c0 / cfg.cslm_mlp_reduction);
    std::uint64_t cslm = conv_macs(3, c0, 3, 1, h, w) + conv_macs(c0, c0, 1, 1, h, w) + static_cast<std::uint64_t>(2 * c0 * hidden) +
                         conv_macs(2, 1, 7, 1, h, w);
    for (int i = 0; i < 3; ++i) cslm += conv_macs(cfg.width(i), cfg.width(i + 1), 3, 1, h >> (i + 1), w >> (i + 1));

    std::uint64_t dfab = 0;
    for (int i = 0; i < 4; ++i) {
        const auto wi = cfg.width(i), hh = h >> i, ww = w >> i;
        const auto se_hidden = std::max<std::int64_t>(1, wi / cfg.se_reduction);
        dfab += conv_macs(cfg.width(i + 1) + 2 * wi, wi, 1, 1, hh, ww) + static_cast<std::uint64_t>(2 * wi * se_hidden) + res_block(wi, hh, ww);
    }
    r.modules["scb"] = scb;
    r.modules["lgcb"] = r.lgcb_block * static_cast<std::uint64_t>(cfg.num_lgcb);
    r.modules["cslm"] = cslm;
    r.modules["dfab"] = dfab;
    r.modules["head"] = conv_macs(c0, 3, 3, 1, h, w);
    for (const auto& [_, v] : r.modules) r.total += v;
    return r;
}

ZID_NAMESPACE_END
