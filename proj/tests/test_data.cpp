#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "zid/backbone.hpp"
#include "zid/config.hpp"
#include "zid/data.hpp"
#include "zid/diffusion.hpp"
#include "zid/weights.hpp"

using namespace zid;

namespace {

double max_scatter_error(const HazyCleanPair& p) {
    const auto t = p.scene.transmission();
    double err = 0;
    for (std::int64_t y = 0; y < p.clean.height(); ++y)
        for (std::int64_t x = 0; x < p.clean.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                const double ti = t.at(y, x);
                const double want = std::clamp(p.clean.at(y, x, c) * ti + p.scene.airlight[c] * (1 - ti), 0.0, 1.0);
                err = std::max(err, std::abs(p.hazy.at(y, x, c) - want));
            }
    return err;
}

SceneParams flat_scene(std::int64_t h, std::int64_t w, double depth, double beta, std::array<double, 3> a) {
    SceneParams s;
    s.airlight = a;
    s.beta_scatter = beta;
    s.depth = Plane(h, w, depth);
    return s;
}

}  // namespace

TEST(CleanImage, DeterministicInRangeAndSeedSensitive) {
    const Image a = gen_clean_image(Rng(3), 32, 48), b = gen_clean_image(Rng(3), 32, 48), c = gen_clean_image(Rng(4), 32, 48);
    EXPECT_EQ(a.height(), 32);
    EXPECT_EQ(a.width(), 48);
    double l1 = 0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) {
        ASSERT_EQ(a.pixels()[i], b.pixels()[i]);
        ASSERT_GE(a.pixels()[i], 0.0);
        ASSERT_LE(a.pixels()[i], 1.0);
        l1 += std::abs(a.pixels()[i] - c.pixels()[i]);
    }
    EXPECT_GT(l1 / static_cast<double>(a.pixels().size()), 0.01);
    EXPECT_THROW(gen_clean_image(Rng(1), 15, 32), ShapeError);
}

TEST(Depth, Kinds) {
    const Plane ramp = gen_depth(Rng(1), 20, 12, DepthKind::ramp);
    for (std::int64_t x = 0; x < 12; ++x) {
        EXPECT_EQ(ramp.at(0, x), 0.0);
        EXPECT_EQ(ramp.at(19, x), 1.0);
    }
    const Plane radial = gen_depth(Rng(1), 21, 21, DepthKind::radial);
    EXPECT_EQ(radial.at(10, 10), 0.0);
    for (double v : radial.values) EXPECT_GE(v, 0.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Plane d = gen_depth(Rng(seed), 17, 23);
        const auto [lo, hi] = std::minmax_element(d.values.begin(), d.values.end());
        EXPECT_EQ(*lo, 0.0);
        EXPECT_EQ(*hi, 1.0);
    }
    EXPECT_EQ(parse_depth_kind("noisy_ramp"), DepthKind::noisy_ramp);
    EXPECT_THROW(parse_depth_kind("flat"), DataError);
}

TEST(SynthHaze, Examples) {
    ColorField f(4, 4);
    for (auto& v : f.values) v = 0.2;
    const Image clean = Image::clamped(f);
    const Image mid = synth_haze(clean, flat_scene(4, 4, std::log(2.0), 1.0, {0.9, 0.9, 0.9}));
    for (double v : mid.pixels()) EXPECT_NEAR(v, 0.55, 1e-12);

    const Image rnd = gen_clean_image(Rng(5), 16, 16);
    const Image none = synth_haze(rnd, flat_scene(16, 16, 0.0, 2.0, {0.8, 0.9, 1.0}));
    for (std::size_t i = 0; i < rnd.pixels().size(); ++i) EXPECT_EQ(none.pixels()[i], rnd.pixels()[i]);

    const Image full = synth_haze(rnd, flat_scene(16, 16, 1e6, 1.0, {0.8, 0.9, 1.0}));
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
            EXPECT_EQ(full.at(y, x, 0), 0.8);
            EXPECT_EQ(full.at(y, x, 2), 1.0);
        }
    EXPECT_THROW(synth_haze(rnd, flat_scene(8, 16, 0.0, 1.0, {1, 1, 1})), ShapeError);
}

TEST(Pairs, SceneInvariantsAndDeterminism) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = gen_pair(seed, 32, 32), q = gen_pair(seed, 32, 32);
        EXPECT_LE(max_scatter_error(p), 1e-9);
        EXPECT_EQ(p.hazy.pixels().size(), q.hazy.pixels().size());
        for (std::size_t i = 0; i < p.hazy.pixels().size(); ++i) ASSERT_EQ(p.hazy.pixels()[i], q.hazy.pixels()[i]);
        for (double a : p.scene.airlight) {
            EXPECT_GE(a, 0.7);
            EXPECT_LE(a, 1.0);
        }
        EXPECT_GE(p.scene.beta_scatter, kBetaMin);
        EXPECT_LE(p.scene.beta_scatter, kBetaMax);
        const auto t = p.scene.transmission();
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            EXPECT_GT(t.values[i], 0.0);
            EXPECT_LE(t.values[i], 1.0);
            if (p.scene.depth.values[i] == 0.0) EXPECT_EQ(t.values[i], 1.0);
        }
    }
}

TEST(Augment, InvariantDimsAndFlip) {
    const auto src = gen_pair(11, 64, 64);
    for (std::uint64_t k = 0; k < 20; ++k) {
        const auto a = augment(src, Rng(100 + k), 48);
        EXPECT_EQ(a.clean.height(), 48);
        EXPECT_EQ(a.clean.width(), 48);
        EXPECT_EQ(a.scene.depth.height, 48);
        EXPECT_LE(max_scatter_error(a), 1e-6);
    }
    // Crop equal to the source forces scale 1 (from below) or larger.
    const auto same = augment(src, Rng(1), 64);
    EXPECT_EQ(same.clean.height(), 64);
    EXPECT_THROW(augment(src, Rng(1), 80), ShapeError);

    const auto twice = flip_h(flip_h(src));
    for (std::size_t i = 0; i < src.clean.pixels().size(); ++i) {
        ASSERT_EQ(twice.clean.pixels()[i], src.clean.pixels()[i]);
        ASSERT_EQ(twice.hazy.pixels()[i], src.hazy.pixels()[i]);
    }
    const auto once = flip_h(src);
    EXPECT_EQ(once.clean.at(3, 0, 1), src.clean.at(3, 63, 1));
}

TEST(Augment, RotationIsExactPermutation) {
    // At crop == source with scale pinned to 1 the output is a pure flip/rotation.
    const auto src = gen_pair(12, 32, 32);
    const AugmentConfig pinned{1.0, 1.0};
    for (std::uint64_t k = 0; k < 8; ++k) {
        const auto a = augment(src, Rng(k), 32, pinned);
        auto x = std::vector<double>(a.clean.pixels().begin(), a.clean.pixels().end());
        auto y = std::vector<double>(src.clean.pixels().begin(), src.clean.pixels().end());
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        EXPECT_EQ(x, y);
    }
}

TEST(Severity, DenserHazeScoresHigher) {
    const Image clean = gen_clean_image(Rng(21), 32, 32);
    auto scene = gen_scene(21, 32, 32);
    std::vector<Image> hazy, cleans;
    for (double beta : {0.5, 1.0, 2.0, 3.0}) {
        scene.beta_scatter = beta;
        hazy.push_back(synth_haze(clean, scene));
        cleans.push_back(clean);
    }
    const auto s = severity_scores(hazy, cleans);
    for (std::size_t i = 1; i < s.raw.size(); ++i) EXPECT_GT(s.raw[i], s.raw[i - 1]);
    const auto caps = severity_caps(s.normalized, SeverityConfig{}, 1000);
    for (std::size_t i = 1; i < caps.size(); ++i) EXPECT_GT(caps[i], caps[i - 1]);
}

TEST(ConfigFile, ParseOverridesAndErrors) {
    const auto c = Config::parse("# desk run\nseed = 7\nlr=3e-4   # faster\n\nhf_kind = sobel\n");
    EXPECT_EQ(c.get_int("seed"), 7);
    EXPECT_DOUBLE_EQ(c.get_double("lr"), 3e-4);
    EXPECT_EQ(c.get("hf_kind"), "sobel");
    EXPECT_EQ(c.get_int("batch_size"), 8);
    EXPECT_EQ(c.get_list("perceptual_weights"), (std::vector<double>{1.0, 0.5, 0.25}));
    EXPECT_TRUE(c.get_bool("augment"));

    try {
        Config::parse("seed = 1\nlearning_rate = 2\n", "desk.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("desk.cfg:2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
    }
    EXPECT_THROW(Config::parse("seed 3\n"), ConfigError);
    Config d;
    d.set_override("batch_size=4");
    EXPECT_EQ(d.get_int("batch_size"), 4);
    EXPECT_THROW(d.set_override("batch_size"), ConfigError);
    EXPECT_THROW(d.set_override("nope=1"), ConfigError);
    d.set("lr", "fast");
    EXPECT_THROW(d.get_double("lr"), ConfigError);
    try {
        Config::load("/nonexistent/desk.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/desk.cfg"), std::string::npos);
    }
    // serialize() round-trips.
    const auto back = Config::parse(c.serialize());
    EXPECT_EQ(back.values(), c.values());
}

TEST(WeightFormat, RoundTripIsBitwiseAndSorted) {
    ParamStore ps;
    Backbone bb(ps, Rng(3), BackboneConfig{});
    WeightFile wf;
    wf.config = "seed = 3\n";
    wf.put_params(ps);
    wf.entries["zipph.x"] = {Shape{2, 2}, {1.5f, -0.0f, std::numeric_limits<float>::denorm_min(), 3e38f}};
    const auto bytes = encode_weights(wf);
    EXPECT_EQ(bytes.substr(0, 4), "ZIDW");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
    const auto back = decode_weights(bytes);
    EXPECT_EQ(back.config, wf.config);
    ASSERT_EQ(back.entries.size(), wf.entries.size());
    for (const auto& [name, e] : wf.entries) {
        const auto& b = back.entries.at(name);
        EXPECT_EQ(b.shape, e.shape);
        ASSERT_EQ(std::memcmp(b.data.data(), e.data.data(), e.data.size() * sizeof(float)), 0) << name;
    }
    EXPECT_EQ(encode_weights(back), bytes);

    // Names appear in lexicographic order in the byte stream.
    std::size_t last = 0;
    for (const auto& [name, e] : wf.entries) {
        const auto pos = bytes.find(name, last);
        ASSERT_NE(pos, std::string::npos);
        last = pos;
    }

    ParamStore ps2;
    Backbone bb2(ps2, Rng(99), BackboneConfig{});
    load_params(ps2, back, LoadMode::inference);
    for (const auto& [name, t] : ps.all())
        for (std::int64_t i = 0; i < t.numel(); ++i) ASSERT_EQ(static_cast<float>(t[i]), static_cast<float>(ps2.at(name)[i]));
    EXPECT_THROW(load_params(ps2, back, LoadMode::training), DataError);
    EXPECT_NO_THROW(load_params(ps2, strip_training_only(back), LoadMode::training));
}

TEST(WeightFormat, RejectsCorruption) {
    WeightFile wf;
    wf.entries["a"] = {Shape{3}, {1, 2, 3}};
    wf.entries["b"] = {Shape{1, 2}, {4, 5}};
    const auto bytes = encode_weights(wf);
    for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() - 1}) EXPECT_THROW(decode_weights(bytes.substr(0, cut)), DataError);
    EXPECT_THROW(decode_weights(bytes + "x"), DataError);
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_weights(bad), DataError);
    // Swap the two names: "b" before "a" breaks the sort invariant.
    std::string swapped = bytes;
    const auto pa = swapped.find('a', 16), pb = swapped.find('b', pa + 1);
    swapped[pa] = 'b';
    swapped[pb] = 'a';
    EXPECT_THROW(decode_weights(swapped), DataError);

    ParamStore ps;
    ps.add("a", Shape{4});
    EXPECT_THROW(load_params(ps, wf, LoadMode::inference), DataError);
    EXPECT_THROW(load_weights("/nonexistent/w.zid"), DataError);
}

TEST(WeightFormat, TrainingOnlyNames) {
    EXPECT_TRUE(is_training_only("zipph.enc0.weight"));
    EXPECT_TRUE(is_training_only("aux.fc1.weight"));
    EXPECT_TRUE(is_training_only("optim.step"));
    EXPECT_FALSE(is_training_only("lgcb.0.qkv_pw.weight"));
    EXPECT_FALSE(is_training_only("zipphx"));
}
