#include <gtest/gtest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "zid/backbone.hpp"

using namespace zid;
using zid::testing::grad_check;
using zid::testing::grad_check_sampled;
using zid::testing::probe_loss;
using zid::testing::random_tensor;

namespace {

BackboneConfig small_config(std::int64_t c = 2) {
    BackboneConfig cfg;
    cfg.base_channels = c;
    cfg.num_lgcb = 1;
    cfg.se_reduction = 2;
    cfg.cslm_mlp_reduction = 2;
    return cfg;
}

void fill(Tensor& t, double v) {
    for (auto& x : t.mutable_data()) x = static_cast<Real>(v);
}

void randomize(Tensor& t, Rng rng, double lo = -0.5, double hi = 0.5) {
    for (auto& x : t.mutable_data()) x = static_cast<Real>(rng.uniform(lo, hi));
}

std::vector<Tensor> params_with_prefix(ParamStore& ps, const std::string& prefix) {
    std::vector<Tensor> out;
    for (auto& [name, t] : ps.all())
        if (name.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i] - b[i])));
    return m;
}

// Naive per-channel 3x3 depth-wise convolution with zero padding.
std::vector<double> naive_depthwise(const std::vector<double>& x, const Tensor& w, std::int64_t C, std::int64_t H, std::int64_t W) {
    std::vector<double> out(x.size(), 0.0);
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t xx = 0; xx < W; ++xx) {
                double s = 0;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        const auto iy = y + i - 1, ix = xx + j - 1;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                        s += x[(c * H + iy) * W + ix] * w[(c * 3 + i) * 3 + j];
                    }
                out[(c * H + y) * W + xx] = s;
            }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Semantic context encoder

TEST(Scb, StageShapes) {
    ParamStore ps;
    BackboneConfig cfg;
    Scb scb(ps, Rng(1), cfg);
    NoGradGuard ng;
    Rng rng(2);
    auto o = scb(random_tensor({1, 3, 32, 32}, rng, 0, 1));
    EXPECT_EQ(o.s[0].shape(), (Shape{1, 8, 32, 32}));
    EXPECT_EQ(o.s[1].shape(), (Shape{1, 16, 16, 16}));
    EXPECT_EQ(o.s[2].shape(), (Shape{1, 32, 8, 8}));
    EXPECT_EQ(o.s[3].shape(), (Shape{1, 64, 4, 4}));
    EXPECT_EQ(o.fb.shape(), (Shape{1, 128, 2, 2}));
}

TEST(Scb, ZeroInputGivesZeroFeatures) {
    ParamStore ps;
    Scb scb(ps, Rng(3), small_config());
    NoGradGuard ng;
    auto o = scb(Tensor(Shape{1, 3, 16, 16}));
    for (const auto& s : o.s)
        for (Real v : s.data()) EXPECT_EQ(v, 0.0);
    for (Real v : o.fb.data()) EXPECT_EQ(v, 0.0);
}

TEST(Scb, GradientCheck) {
    ParamStore ps;
    Scb scb(ps, Rng(4), small_config());
    Rng rng(5);
    Tensor x = random_tensor({1, 3, 16, 16}, rng);
    auto f = [&] {
        auto o = scb(x);
        Tensor l = probe_loss(o.fb, 1);
        for (int i = 0; i < 4; ++i) l = l + probe_loss(o.s[i], 10 + i);
        return l;
    };
    auto inputs = params_with_prefix(ps, "scb.");
    inputs.push_back(x);
    auto r = grad_check_sampled(f, inputs, 60);
    EXPECT_LT(r.rel_error, 1e-3);
    EXPECT_GT(r.max_numeric, 0.0);
}

// ---------------------------------------------------------------------------
// LGCB

TEST(Lgcb, QkvWidths) {
    ParamStore ps;
    BackboneConfig cfg;
    Lgcb b(ps, Rng(6), "lgcb.0", cfg);
    NoGradGuard ng;
    Rng rng(7);
    auto [q, k, v] = b.qkv(random_tensor({2, 128, 2, 2}, rng));
    for (const auto& t : {q, k, v}) EXPECT_EQ(t.shape(), (Shape{2, 128, 2, 2}));
    EXPECT_THROW(b.qkv(random_tensor({1, 64, 2, 2}, rng)), ShapeError);
}

TEST(Lgcb, QkvIdentityConstruction) {
    ParamStore ps;
    Lgcb b(ps, Rng(8), "b", 4, 8);
    fill(b.qkv_pw.weight, 0.0);
    fill(b.qkv_dw.weight, 0.0);
    for (std::int64_t o = 0; o < 12; ++o) {
        b.qkv_pw.weight.mutable_data()[o * 4 + o % 4] = 1;
        b.qkv_dw.weight.mutable_data()[o * 9 + 4] = 1;
    }
    NoGradGuard ng;
    Rng rng(9);
    Tensor x = random_tensor({1, 4, 3, 3}, rng);
    auto [q, k, v] = b.qkv(x);
    EXPECT_EQ(max_abs_diff(q, x), 0.0);
    EXPECT_EQ(max_abs_diff(k, x), 0.0);
    EXPECT_EQ(max_abs_diff(v, x), 0.0);
}

TEST(Lgcb, QkvMatchesDirectLoops) {
    ParamStore ps;
    Lgcb b(ps, Rng(10), "b", 4, 8);
    NoGradGuard ng;
    Rng rng(11);
    Tensor x = random_tensor({1, 4, 2, 2}, rng);
    std::vector<double> pw(12 * 4, 0.0);
    for (int o = 0; o < 12; ++o)
        for (int p = 0; p < 4; ++p)
            for (int c = 0; c < 4; ++c) pw[o * 4 + p] += b.qkv_pw.weight[o * 4 + c] * x[c * 4 + p];
    auto want = naive_depthwise(pw, b.qkv_dw.weight, 12, 2, 2);
    auto [q, k, v] = b.qkv(x);
    const Tensor* parts[3] = {&q, &k, &v};
    for (int s = 0; s < 3; ++s)
        for (int i = 0; i < 16; ++i) EXPECT_NEAR((*parts[s])[i], want[s * 16 + i], 1e-12);
}

TEST(Lgcb, AttentionMatchesDenseOracle) {
    ParamStore ps;
    Lgcb b(ps, Rng(12), "b", 2, 2);
    b.log_tau.mutable_data()[0] = static_cast<Real>(std::log(0.7));
    const double wo[4] = {0.3, -1.1, 0.8, 0.25};
    for (int i = 0; i < 4; ++i) b.proj_out.weight.mutable_data()[i] = wo[i];
    // [B=1, C=2, h=1, w=2], so N = 2.
    const double xv[4] = {0.1, 0.2, -0.3, 0.4}, qv[4] = {1.0, 2.0, -0.5, 0.25}, kv[4] = {0.3, -0.7, 1.5, 0.9},
                 vv[4] = {0.6, -0.2, 0.05, 1.3};
    auto mk = [](const double* d) { return Tensor(Shape{1, 2, 1, 2}, std::vector<Real>(d, d + 4)); };
    NoGradGuard ng;
    Tensor a = b.attention_matrix(mk(qv), mk(kv));
    Tensor out = b.attention(mk(xv), mk(qv), mk(kv), mk(vv));

    double qn[2][2], kn[2][2];
    for (int c = 0; c < 2; ++c) {
        const double nq = std::sqrt(qv[2 * c] * qv[2 * c] + qv[2 * c + 1] * qv[2 * c + 1] + 1e-12);
        const double nk = std::sqrt(kv[2 * c] * kv[2 * c] + kv[2 * c + 1] * kv[2 * c + 1] + 1e-12);
        for (int n = 0; n < 2; ++n) qn[c][n] = qv[2 * c + n] / nq, kn[c][n] = kv[2 * c + n] / nk;
    }
    double A[2][2];
    for (int i = 0; i < 2; ++i) {
        double l[2];
        for (int j = 0; j < 2; ++j) l[j] = (kn[i][0] * qn[j][0] + kn[i][1] * qn[j][1]) / 0.7;
        const double z = std::exp(l[0]) + std::exp(l[1]);
        for (int j = 0; j < 2; ++j) A[i][j] = std::exp(l[j]) / z;
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) EXPECT_NEAR(a[i * 2 + j], A[i][j], 1e-12);
    for (int c = 0; c < 2; ++c)
        for (int n = 0; n < 2; ++n) {
            double av[2];
            for (int r = 0; r < 2; ++r) av[r] = A[r][0] * vv[n] + A[r][1] * vv[2 + n];
            const double want = xv[2 * c + n] + wo[c * 2] * av[0] + wo[c * 2 + 1] * av[1];
            EXPECT_NEAR(out[2 * c + n], want, 1e-12);
        }
}

TEST(Lgcb, AttentionRowsSumToOne) {
    ParamStore ps;
    Lgcb b(ps, Rng(13), "b", 4, 8);
    NoGradGuard ng;
    Rng rng(14);
    for (int trial = 0; trial < 200; ++trial) {
        b.log_tau.mutable_data()[0] = static_cast<Real>(rng.uniform(-3, 3));
        Tensor a = b.attention_matrix(random_tensor({2, 4, 2, 3}, rng, -5, 5), random_tensor({2, 4, 2, 3}, rng, -5, 5));
        for (std::int64_t r = 0; r < 8; ++r) {
            double s = 0;
            for (int j = 0; j < 4; ++j) s += a[r * 4 + j];
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(Lgcb, ZeroOutputProjectionIsResidualIdentity) {
    ParamStore ps;
    Lgcb b(ps, Rng(15), "b", 4, 8);
    fill(b.proj_out.weight, 0.0);
    NoGradGuard ng;
    Rng rng(16);
    Tensor x = random_tensor({1, 4, 2, 2}, rng);
    auto [q, k, v] = b.qkv(x);
    EXPECT_EQ(max_abs_diff(b.attention(x, q, k, v), x), 0.0);
}

TEST(Lgcb, AttentionInvariantToInputScale) {
    ParamStore ps;
    Lgcb b(ps, Rng(17), "b", 4, 8);
    NoGradGuard ng;
    Rng rng(18);
    Tensor x = random_tensor({1, 4, 3, 3}, rng);
    auto [q1, k1, v1] = b.qkv(x);
    auto [q2, k2, v2] = b.qkv(scale(x, Real(3.7)));
    EXPECT_LT(max_abs_diff(b.attention_matrix(q1, k1), b.attention_matrix(q2, k2)), 1e-6);
}

TEST(Lgcb, GdfnIdentities) {
    ParamStore ps;
    Lgcb b(ps, Rng(19), "b", 4, 8);
    NoGradGuard ng;
    Rng rng(20);
    Tensor x = random_tensor({1, 4, 2, 2}, rng);
    Tensor saved = b.ffn_out.weight.detach();
    std::vector<Real> keep(saved.data().begin(), saved.data().end());
    fill(b.ffn_out.weight, 0.0);
    EXPECT_EQ(max_abs_diff(b.gdfn(x), x), 0.0);
    std::copy(keep.begin(), keep.end(), b.ffn_out.weight.mutable_data().begin());
    // Zeroing the gate half of the expansion closes the gate.
    auto w = b.ffn_in.weight.mutable_data();
    std::fill(w.begin() + w.size() / 2, w.end(), Real(0));
    EXPECT_EQ(max_abs_diff(b.gdfn(x), x), 0.0);
}

TEST(Lgcb, GradientChecks) {
    ParamStore ps;
    Lgcb b(ps, Rng(21), "b", 4, 8);
    Rng rng(22);
    Tensor x = random_tensor({1, 4, 2, 2}, rng);
    auto all = params_with_prefix(ps, "b.");
    all.push_back(x);
    auto r_attn = grad_check(
        [&] {
            auto [q, k, v] = b.qkv(x);
            return probe_loss(b.attention(x, q, k, v));
        },
        all);
    EXPECT_LT(r_attn.rel_error, 1e-3);
    auto r_ffn = grad_check([&] { return probe_loss(b.gdfn(x)); }, all);
    EXPECT_LT(r_ffn.rel_error, 1e-3);
    auto r_all = grad_check([&] { return probe_loss(b(x)); }, all);
    EXPECT_LT(r_all.rel_error, 1e-3);
    EXPECT_GT(r_all.max_numeric, 0.0);
}

TEST(Lgcb, StackWithZeroedProjectionsIsIdentity) {
    ParamStore ps;
    auto cfg = small_config(1);
    cfg.num_lgcb = 3;
    Backbone net(ps, Rng(23), cfg);
    for (auto& b : net.lgcb) fill(b.proj_out.weight, 0.0), fill(b.ffn_out.weight, 0.0);
    NoGradGuard ng;
    Rng rng(24);
    Tensor fb = random_tensor({2, 16, 2, 2}, rng);
    Tensor out = net.lgcb_stack(fb);
    EXPECT_EQ(out.shape(), fb.shape());
    EXPECT_EQ(max_abs_diff(out, fb), 0.0);
}

// ---------------------------------------------------------------------------
// CSLM

TEST(Cslm, SaturatedMaskPassesThrough) {
    ParamStore ps;
    Cslm c(ps, Rng(25), small_config());
    fill(c.spatial.weight, 0.0);
    fill(c.spatial.bias, -1e4);
    fill(c.mlp2.weight, 0.0);
    fill(c.mlp2.bias, 1.0);
    NoGradGuard ng;
    Rng rng(26);
    auto o = c(random_tensor({1, 3, 16, 16}, rng));
    EXPECT_LT(max_abs_diff(o.gated, o.x), 1e-12);
}

TEST(Cslm, ZeroResidualGivesZeros) {
    ParamStore ps;
    Cslm c(ps, Rng(27), small_config());
    NoGradGuard ng;
    auto o = c(Tensor(Shape{1, 3, 16, 16}));
    for (const auto& t : o.c)
        for (Real v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Cslm, ShapesMatchSemanticStages) {
    ParamStore ps;
    BackboneConfig cfg;
    Cslm c(ps, Rng(28), cfg);
    NoGradGuard ng;
    Rng rng(29);
    auto o = c(random_tensor({1, 3, 32, 32}, rng));
    for (int i = 0; i < 4; ++i) EXPECT_EQ(o.c[i].shape(), (Shape{1, cfg.width(i), 32 >> i, 32 >> i}));
}

TEST(Cslm, GradientCheck) {
    ParamStore ps;
    Cslm c(ps, Rng(30), small_config());
    Rng rng(31);
    Tensor x = random_tensor({1, 3, 16, 16}, rng);
    auto inputs = params_with_prefix(ps, "cslm.");
    inputs.push_back(x);
    auto r = grad_check_sampled(
        [&] {
            auto o = c(x);
            Tensor l = probe_loss(o.gated, 1);
            for (int i = 1; i < 4; ++i) l = l + probe_loss(o.c[i], 20 + i);
            return l;
        },
        inputs, 60);
    EXPECT_LT(r.rel_error, 1e-3);
    EXPECT_GT(r.max_numeric, 0.0);
}

// ---------------------------------------------------------------------------
// DFAB

TEST(Dfab, BypassedSeAndIdentityResBlockReturnsFusion) {
    ParamStore ps;
    Dfab d(ps, Rng(32), "dfab.0", 4, 8, 2);
    d.se_bypass = true;
    fill(d.res.conv2.weight, 0.0);
    NoGradGuard ng;
    Rng rng(33);
    Tensor next = random_tensor({1, 8, 2, 2}, rng), s = random_tensor({1, 4, 4, 4}, rng), c = random_tensor({1, 4, 4, 4}, rng);
    Tensor z = d.fuse(concat({bilinear_upsample(next, 2), s, c}, 1));
    Tensor out = d(next, s, c);
    EXPECT_EQ(out.shape(), (Shape{1, 4, 4, 4}));
    EXPECT_EQ(max_abs_diff(out, z), 0.0);
    EXPECT_THROW(d(next, random_tensor({1, 4, 8, 8}, rng), c), ShapeError);
}

TEST(Dfab, GradientCheck) {
    ParamStore ps;
    Dfab d(ps, Rng(34), "d", 2, 4, 2);
    Rng rng(35);
    Tensor next = random_tensor({1, 4, 2, 2}, rng), s = random_tensor({1, 2, 4, 4}, rng), c = random_tensor({1, 2, 4, 4}, rng);
    auto inputs = params_with_prefix(ps, "d.");
    for (auto t : {next, s, c}) inputs.push_back(t);
    auto r = grad_check([&] { return probe_loss(d(next, s, c)); }, inputs);
    EXPECT_LT(r.rel_error, 1e-3);
}

// ---------------------------------------------------------------------------
// Full model

TEST(Backbone, ForwardShapeDeterminismAndClamp) {
    ParamStore ps;
    Backbone net(ps, Rng(36), small_config(4));
    Rng rng(37);
    Tensor x = random_tensor({2, 3, 32, 32}, rng, 0, 1), hf = random_tensor({2, 3, 32, 32}, rng, -0.1, 0.1);
    NoGradGuard ng;
    auto a = net.forward(x, hf, Mode::training), b = net.forward(x, hf, Mode::training);
    EXPECT_EQ(a.image.shape(), x.shape());
    EXPECT_EQ(max_abs_diff(a.image, b.image), 0.0);
    EXPECT_EQ(a.fb_hat.shape(), (Shape{2, 64, 2, 2}));
    auto c = net.forward(x, hf, Mode::inference);
    for (std::int64_t i = 0; i < c.image.numel(); ++i) EXPECT_EQ(c.image[i], std::clamp(a.image[i], Real(0), Real(1)));
    EXPECT_THROW(net.forward(random_tensor({1, 3, 24, 32}, rng), random_tensor({1, 3, 24, 32}, rng), Mode::training), ShapeError);
}

TEST(Backbone, SmokeFiniteForwardAndGrads) {
    ParamStore ps;
    Backbone net(ps, Rng(38), BackboneConfig{});
    Rng rng(39);
    Tensor x = random_tensor({1, 3, 32, 32}, rng, 0, 1), target = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    Tensor hf = random_tensor({1, 3, 32, 32}, rng, -0.2, 0.2);
    auto o = net.forward(x, hf, Mode::training);
    for (Real v : o.image.data()) ASSERT_TRUE(std::isfinite(v));
    backward(mean(abs(o.image - target)));
    for (auto& [name, t] : ps.all()) {
        ASSERT_TRUE(t.has_grad()) << name;
        for (Real g : t.grad()) ASSERT_TRUE(std::isfinite(g)) << name;
    }
}

TEST(Backbone, EndToEndGradientCheck) {
    ParamStore ps;
    auto cfg = small_config(4);
    cfg.num_lgcb = 2;
    Backbone net(ps, Rng(40), cfg);
    Rng rng(41);
    Tensor x = random_tensor({1, 3, 16, 16}, rng, 0, 1), hf = random_tensor({1, 3, 16, 16}, rng, -0.2, 0.2);
    std::vector<Tensor> params;
    for (auto& [_, t] : ps.all()) params.push_back(t);
    auto r = grad_check_sampled([&] { return probe_loss(net.forward(x, hf, Mode::training).image); }, params, 20);
    EXPECT_LT(r.rel_error, 1e-2);
}

TEST(Backbone, InferenceTapeHasNoDiffusionOps) {
    ParamStore ps;
    Backbone net(ps, Rng(42), small_config());
    Rng rng(43);
    Image img(16, 16);
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) img.set(y, x, c, rng.uniform());
    OpTape tape;
    Image out = net.infer(img);
    EXPECT_EQ(out.height(), 16);
    EXPECT_GT(tape.entries().size(), 0u);
    EXPECT_EQ(tape.count_owned_by("zipph"), 0u);
    EXPECT_TRUE(net.infer(img) == out);
}

// ---------------------------------------------------------------------------
// MAC accounting

TEST(Macs, PointwiseExample) { EXPECT_EQ(conv_macs(2, 3, 1, 1, 4, 4), 96u); }

TEST(Macs, LgcbBlockMatchesInstrumentedRun) {
    BackboneConfig cfg;
    ParamStore ps;
    Lgcb b(ps, Rng(44), "b", cfg);
    NoGradGuard ng;
    Rng rng(45);
    for (auto [h, w] : {std::pair{2, 2}, std::pair{4, 4}, std::pair{3, 5}}) {
        MacCounter mc;
        b(random_tensor({1, cfg.bottleneck(), h, w}, rng));
        EXPECT_EQ(mc.count(), lgcb_block_macs(cfg, h * w));
    }
    EXPECT_EQ(lgcb_block_macs(cfg, 64) * 1000 / lgcb_block_macs(cfg, 16), 4000u);
}

TEST(Macs, SymbolicTotalMatchesInstrumentedForward) {
    for (auto cfg : {small_config(2), BackboneConfig{}}) {
        ParamStore ps;
        Backbone net(ps, Rng(46), cfg);
        NoGradGuard ng;
        Rng rng(47);
        MacCounter mc;
        net.forward(random_tensor({1, 3, 32, 48}, rng), random_tensor({1, 3, 32, 48}, rng), Mode::inference);
        EXPECT_EQ(mc.count(), count_macs(cfg, 32, 48).total);
    }
}

TEST(Macs, ResolutionScaling) {
    BackboneConfig cfg;
    auto a = count_macs(cfg, 256, 256), b = count_macs(cfg, 512, 512);
    EXPECT_EQ(b.lgcb_attention, 4 * a.lgcb_attention);
    EXPECT_EQ(b.spatial_attention, 16 * a.spatial_attention);
    const double ratio = static_cast<double>(b.total) / static_cast<double>(a.total);
    EXPECT_NEAR(ratio, 4.0, 0.01);
}
