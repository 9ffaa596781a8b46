#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "zid/metrics.hpp"
#include "zid/rng.hpp"

using namespace zid;

namespace {

Image random_image(std::int64_t h, std::int64_t w, Rng& rng, bool quantized = false) {
    std::vector<double> v(static_cast<std::size_t>(h * w * 3));
    for (auto& x : v) x = quantized ? static_cast<double>(rng.uniform_int(0, 255)) / 255.0 : rng.uniform();
    return Image(h, w, std::move(v));
}

Image flip_h(const Image& img) {
    Image out(img.height(), img.width());
    for (std::int64_t y = 0; y < img.height(); ++y)
        for (std::int64_t x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) out.set(y, img.width() - 1 - x, c, img.at(y, x, c));
    return out;
}

// Direct (non-separable) 5x5 binomial blur with reflect borders.
ColorField oracle_blur(const ColorField& f) {
    const double k1[5] = {1, 4, 6, 4, 1};
    ColorField out(f.height, f.width);
    for (std::int64_t y = 0; y < f.height; ++y)
        for (std::int64_t x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int i = -2; i <= 2; ++i)
                    for (int j = -2; j <= 2; ++j) {
                        auto ry = y + i, rx = x + j;
                        if (ry < 0) ry = -ry;
                        if (ry >= f.height) ry = 2 * (f.height - 1) - ry;
                        if (rx < 0) rx = -rx;
                        if (rx >= f.width) rx = 2 * (f.width - 1) - rx;
                        s += k1[i + 2] * k1[j + 2] / 256.0 * f.at(ry, rx, c);
                    }
                out.at(y, x, c) = s;
            }
    return out;
}

// Bilinear x2 using the explicit half-pixel formula.
double oracle_up_sample(const ColorField& f, double oy, double ox, int c) {
    auto src = [](double o, std::int64_t n) { return std::clamp((o + 0.5) / 2 - 0.5, 0.0, static_cast<double>(n - 1)); };
    const double sy = src(oy, f.height), sx = src(ox, f.width);
    const auto y0 = static_cast<std::int64_t>(std::floor(sy)), x0 = static_cast<std::int64_t>(std::floor(sx));
    const auto y1 = std::min(y0 + 1, f.height - 1), x1 = std::min(x0 + 1, f.width - 1);
    const double wy = sy - y0, wx = sx - x0;
    return (1 - wy) * ((1 - wx) * f.at(y0, x0, c) + wx * f.at(y0, x1, c)) + wy * ((1 - wx) * f.at(y1, x0, c) + wx * f.at(y1, x1, c));
}

ColorField oracle_residual(const ColorField& f) {
    ColorField blur = oracle_blur(f);
    ColorField down(f.height / 2, f.width / 2);
    for (std::int64_t y = 0; y < down.height; ++y)
        for (std::int64_t x = 0; x < down.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j) s += blur.at(2 * y + i, 2 * x + j, c);
                down.at(y, x, c) = s / 4;
            }
    ColorField out(f.height, f.width);
    for (std::int64_t y = 0; y < f.height; ++y)
        for (std::int64_t x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(y, x, c) - oracle_up_sample(down, static_cast<double>(y), static_cast<double>(x), c);
    return out;
}

// Brute-force SSIM: per-window weighted statistics.
double oracle_ssim(const Image& a, const Image& b) {
    const auto ya = luminance(a), yb = luminance(b);
    double w2[11][11], s = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) s += (w2[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5));
    const std::int64_t W = a.width();
    double total = 0;
    std::int64_t count = 0;
    for (std::int64_t r = 0; r + 11 <= a.height(); ++r)
        for (std::int64_t c = 0; c + 11 <= W; ++c) {
            double ma = 0, mb = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    ma += w2[i][j] / s * ya[(r + i) * W + c + j];
                    mb += w2[i][j] / s * yb[(r + i) * W + c + j];
                }
            double va = 0, vb = 0, cv = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double da = ya[(r + i) * W + c + j] - ma, db = yb[(r + i) * W + c + j] - mb;
                    va += w2[i][j] / s * da * da;
                    vb += w2[i][j] / s * db * db;
                    cv += w2[i][j] / s * da * db;
                }
            const double C1 = 1e-4, C2 = 9e-4;
            total += (2 * ma * mb + C1) * (2 * cv + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace

TEST(Ppm, RoundTripQuantizedIsBitwise) {
    Rng rng(1);
    auto img = random_image(7, 5, rng, true);
    auto back = decode_ppm(encode_ppm(img));
    EXPECT_EQ(encode_ppm(back), encode_ppm(img));
    EXPECT_TRUE(back == img);

    const auto path = std::filesystem::temp_directory_path() / "zid_roundtrip.ppm";
    save_image(img, path);
    EXPECT_TRUE(load_image(path) == img);
    std::filesystem::remove(path);
}

TEST(Ppm, WhitePixelAndComments) {
    std::string bytes = "P6\n# a comment\n1 1\n255\n";
    bytes += std::string(3, '\xff');
    auto img = decode_ppm(bytes);
    ASSERT_EQ(img.height(), 1);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(img.at(0, 0, c), 1.0);
}

TEST(Ppm, DecodeErrors) {
    std::string good = "P6\n2 2\n255\n" + std::string(12, '\x10');
    EXPECT_NO_THROW(decode_ppm(good));
    EXPECT_THROW(decode_ppm(good.substr(0, good.size() - 1)), DataError);  // truncated
    EXPECT_THROW(decode_ppm("P3\n1 1\n255\n0 0 0"), DataError);           // magic
    EXPECT_THROW(decode_ppm("P6\n1 1\n65535\n" + std::string(6, '\0')), DataError);
    EXPECT_THROW(decode_ppm("P6\n99999999 99999999\n255\n"), DataError);  // overflow
    EXPECT_THROW(load_image("/nonexistent/zid.ppm"), DataError);
}

TEST(Image, ConstructorsClamp) {
    Image img(1, 1, std::vector<double>{-0.5, 0.5, 1.5});
    EXPECT_EQ(img.at(0, 0, 0), 0.0);
    EXPECT_EQ(img.at(0, 0, 1), 0.5);
    EXPECT_EQ(img.at(0, 0, 2), 1.0);
}

TEST(Gaussian, ConstantAndImpulse) {
    auto c = gaussian5x5(ColorField(6, 7, 0.3));
    for (double v : c.values) EXPECT_NEAR(v, 0.3, 1e-15);

    ColorField imp(9, 9);
    for (int ch = 0; ch < 3; ++ch) imp.at(4, 4, ch) = 1.0;
    auto g = gaussian5x5(imp);
    const double k[5] = {1, 4, 6, 4, 1};
    EXPECT_NEAR(g.at(4, 4, 0), 36.0 / 256.0, 1e-15);
    for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j) EXPECT_NEAR(g.at(4 + i, 4 + j, 1), k[i + 2] * k[j + 2] / 256.0, 1e-15);
    EXPECT_EQ(g.at(0, 0, 2), 0.0);
}

TEST(Gaussian, MeanPreservedWhenBorderBandIsConstant) {
    Rng rng(2);
    ColorField f(12, 10, 0.4);
    for (std::int64_t y = 3; y < 9; ++y)
        for (std::int64_t x = 3; x < 7; ++x)
            for (int c = 0; c < 3; ++c) f.at(y, x, c) = rng.uniform();
    auto g = gaussian5x5(f);
    double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < f.values.size(); ++i) m0 += f.values[i], m1 += g.values[i];
    EXPECT_NEAR(m0 / f.values.size(), m1 / f.values.size(), 1e-9);
}

TEST(Gaussian, SeparableMatchesDirectOracle) {
    Rng rng(3);
    auto img = random_image(7, 9, rng);
    auto a = gaussian5x5(img.field()), b = oracle_blur(img.field());
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-14);
}

TEST(Laplacian, ConstantGivesZero) {
    auto r = laplacian_residual(Image(8, 8, 0.61));
    for (double v : r.values) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Laplacian, ReconstructionIdentity) {
    Rng rng(4);
    for (auto [h, w] : std::vector<std::pair<int, int>>{{8, 8}, {9, 7}, {16, 12}, {5, 6}}) {
        auto img = random_image(h, w, rng);
        auto res = laplacian_residual(img);
        auto low = pyramid_lowpass(img.field());
        for (std::size_t i = 0; i < res.values.size(); ++i) EXPECT_NEAR(res.values[i] + low.values[i], img.pixels()[i], 1e-9);
    }
}

TEST(Laplacian, VerticalStepMatchesComposedOracle) {
    ColorField step(8, 8);
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 4; x < 8; ++x)
            for (int c = 0; c < 3; ++c) step.at(y, x, c) = 0.9;
    auto got = laplacian_residual(step), want = oracle_residual(step);
    for (std::size_t i = 0; i < got.values.size(); ++i) EXPECT_NEAR(got.values[i], want.values[i], 1e-12);
    EXPECT_LT(got.at(3, 3, 0), 0.0);  // dark side of the edge
    EXPECT_GT(got.at(3, 4, 0), 0.0);  // bright side
}

TEST(Laplacian, Linearity) {
    Rng rng(5);
    auto img = random_image(10, 12, rng);
    const double alpha = 0.37;
    std::vector<double> scaled(img.pixels().begin(), img.pixels().end());
    for (auto& v : scaled) v *= alpha;
    auto r1 = laplacian_residual(Image(10, 12, scaled)), r0 = laplacian_residual(img);
    for (std::size_t i = 0; i < r0.values.size(); ++i) EXPECT_NEAR(r1.values[i], alpha * r0.values[i], 1e-9);
}

TEST(HfOperator, ConstantIsZeroForAllKinds) {
    for (auto k : {HfKind::color_laplacian, HfKind::gray_laplacian, HfKind::sobel}) {
        auto r = hf_operator(Image(8, 8, 0.5), k);
        for (double v : r.values) EXPECT_NEAR(v, 0.0, 1e-15) << to_string(k);
    }
    EXPECT_THROW(parse_hf_kind("canny"), ConfigError);
}

TEST(HfOperator, GrayCollapsesEqualLumaChromaEdge) {
    // Red and green halves with identical BT.601 luma.
    const double g = 0.299 / 0.587;
    Image img(8, 8);
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x) {
            if (x < 4) img.set(y, x, 0, 1.0);
            else img.set(y, x, 1, g);
        }
    auto gray = hf_operator(img, HfKind::gray_laplacian);
    auto color = hf_operator(img, HfKind::color_laplacian);
    double gmax = 0, cmax = 0;
    for (double v : gray.values) gmax = std::max(gmax, std::abs(v));
    for (double v : color.values) cmax = std::max(cmax, std::abs(v));
    EXPECT_LT(gmax, 1e-12);
    EXPECT_GT(cmax, 0.1);
}

TEST(HfOperator, SobelVerticalStep) {
    Image img(6, 6);
    for (std::int64_t y = 0; y < 6; ++y)
        for (std::int64_t x = 3; x < 6; ++x)
            for (int c = 0; c < 3; ++c) img.set(y, x, c, 1.0);
    auto s = hf_operator(img, HfKind::sobel);
    for (std::int64_t y = 0; y < 6; ++y)
        for (std::int64_t x = 0; x < 6; ++x) {
            // 3x3 oracle: |Gx| = 4 on both columns adjacent to the edge.
            const double want = (x == 2 || x == 3) ? 4.0 : 0.0;
            EXPECT_NEAR(s.at(y, x, 0), want, 1e-12) << y << "," << x;
            EXPECT_GE(s.at(y, x, 1), 0.0);
        }
}

TEST(Psnr, AnalyticCases) {
    Image a(4, 4, 0.2);
    EXPECT_EQ(psnr(a, a), 99.0);
    EXPECT_NEAR(psnr(a, Image(4, 4, 0.3)), 20.0, 1e-6);
    EXPECT_NEAR(psnr(Image(4, 4, 0.0), Image(4, 4, 0.5)), 10 * std::log10(4.0), 1e-6);
    EXPECT_NEAR(psnr(Image(4, 4, 0.0), Image(4, 4, 0.5)), 6.0206, 1e-4);
    EXPECT_THROW(psnr(a, Image(4, 5)), ShapeError);
}

TEST(Psnr, SymmetricAndFlipInvariant) {
    Rng rng(6);
    auto a = random_image(9, 13, rng), b = random_image(9, 13, rng);
    EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
    EXPECT_NEAR(psnr(flip_h(a), flip_h(b)), psnr(a, b), 1e-12);
}

TEST(Ssim, IdentityAndOracle) {
    Rng rng(7);
    auto a = random_image(16, 16, rng);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);

    Image bin(16, 16), inv(16, 16);
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
            const double v = rng.uniform() < 0.5 ? 0.0 : 1.0;
            for (int c = 0; c < 3; ++c) bin.set(y, x, c, v), inv.set(y, x, c, 1.0 - v);
        }
    const double s = ssim(bin, inv);
    EXPECT_LT(s, 0.0);
    EXPECT_NEAR(s, oracle_ssim(bin, inv), 1e-9);

    std::vector<double> shifted(a.pixels().begin(), a.pixels().end());
    for (auto& v : shifted) v += 0.1;
    Image b(16, 16, shifted);
    const double sb = ssim(a, b);
    EXPECT_LT(sb, 1.0);
    EXPECT_NEAR(sb, oracle_ssim(a, b), 1e-9);
    EXPECT_NEAR(ssim(flip_h(a), flip_h(b)), sb, 1e-12);
    EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), ShapeError);
}

TEST(Color, IdentityAndWhiteBlack) {
    Rng rng(8);
    auto a = random_image(5, 5, rng);
    EXPECT_EQ(delta_e_ab(a, a), 0.0);
    EXPECT_EQ(delta_e_00(a, a), 0.0);
    const Lab white = rgb_to_lab(1, 1, 1), black = rgb_to_lab(0, 0, 0);
    EXPECT_NEAR(white.L, 100.0, 1e-9);
    EXPECT_NEAR(white.a, 0.0, 1e-9);
    EXPECT_NEAR(white.b, 0.0, 1e-9);
    EXPECT_NEAR(black.L, 0.0, 1e-12);
    EXPECT_NEAR(delta_e_ab(Image(2, 2, 1.0), Image(2, 2, 0.0)), 100.0, 1e-9);
}

TEST(Color, Ciede2000PublishedPairs) {
    std::ifstream in(std::string(ZID_TEST_DATA_DIR) + "/ciede2000_pairs.txt");
    ASSERT_TRUE(in);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Lab p{}, q{};
        double want;
        ss >> p.L >> p.a >> p.b >> q.L >> q.a >> q.b >> want;
        EXPECT_NEAR(delta_e_00(p, q), want, 1e-4) << "row " << rows;
        EXPECT_NEAR(delta_e_00(q, p), delta_e_00(p, q), 1e-9);
        ++rows;
    }
    EXPECT_EQ(rows, 34);
}

TEST(Color, Ciede2000SymmetricOnImages) {
    Rng rng(9);
    for (int t = 0; t < 20; ++t) {
        auto a = random_image(4, 4, rng), b = random_image(4, 4, rng);
        EXPECT_NEAR(delta_e_00(a, b), delta_e_00(b, a), 1e-9);
        EXPECT_NEAR(delta_e_ab(a, b), delta_e_ab(b, a), 1e-12);
    }
}

TEST(Conversion, TensorRoundTrip) {
    Rng rng(10);
    std::vector<Image> imgs{random_image(4, 6, rng), random_image(4, 6, rng)};
    auto t = images_to_tensor(imgs);
    ASSERT_EQ(t.shape(), (Shape{2, 3, 4, 6}));
    EXPECT_TRUE(tensor_to_image(t, 1) == imgs[1]);
}
