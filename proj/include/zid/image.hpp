#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "zid/tensor.hpp"

ZID_NAMESPACE_BEGIN

/// Signed H x W x 3 field in interleaved (HWC) order. Holds high-frequency
/// residuals and other quantities that may leave [0, 1].
struct ColorField {
    std::int64_t height = 0, width = 0;
    std::vector<double> values;

    ColorField() = default;
    ColorField(std::int64_t h, std::int64_t w, double fill = 0.0)
        : height(h), width(w), values(static_cast<std::size_t>(h * w * 3), fill) {
        if (h <= 0 || w <= 0) throw ShapeError("ColorField: dimensions must be positive");
    }

    double& at(std::int64_t y, std::int64_t x, int c) { return values[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
    double at(std::int64_t y, std::int64_t x, int c) const { return values[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
};

/// RGB image with every channel value in [0, 1]. Constructors clamp.
class Image {
public:
    Image() = default;
    Image(std::int64_t h, std::int64_t w, double fill = 0.0) : f_(h, w, std::clamp(fill, 0.0, 1.0)) {}
    Image(std::int64_t h, std::int64_t w, std::vector<double> hwc) : f_() {
        if (h <= 0 || w <= 0) throw ShapeError("Image: dimensions must be positive");
        if (static_cast<std::int64_t>(hwc.size()) != h * w * 3) throw ShapeError("Image: expected " + std::to_string(h * w * 3) + " values");
        f_.height = h;
        f_.width = w;
        f_.values = std::move(hwc);
        for (auto& v : f_.values) v = std::clamp(v, 0.0, 1.0);
    }
    /// Clamp point for signed data.
    static Image clamped(const ColorField& f) { return Image(f.height, f.width, f.values); }

    std::int64_t height() const { return f_.height; }
    std::int64_t width() const { return f_.width; }
    double at(std::int64_t y, std::int64_t x, int c) const { return f_.at(y, x, c); }
    void set(std::int64_t y, std::int64_t x, int c, double v) { f_.at(y, x, c) = std::clamp(v, 0.0, 1.0); }
    std::span<const double> pixels() const { return f_.values; }
    const ColorField& field() const { return f_; }

    bool operator==(const Image& o) const { return f_.height == o.f_.height && f_.width == o.f_.width && f_.values == o.f_.values; }

private:
    ColorField f_;
};

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255)

inline std::string encode_ppm(const Image& img) {
    std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    out.reserve(out.size() + img.pixels().size());
    for (double v : img.pixels()) out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L))));
    return out;
}

inline Image decode_ppm(std::string_view bytes, const std::string& what = "<memory>") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& msg) -> DataError { return DataError(what + ": " + msg); };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* field) -> std::int64_t {
        skip_space();
        std::int64_t v = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > (std::int64_t{1} << 31)) throw fail(std::string("dimension overflow in ") + field);
            ++digits;
        }
        if (!digits) throw fail(std::string("missing or malformed ") + field);
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw fail("unsupported magic (expected binary PPM 'P6')");
    pos = 2;
    const auto w = read_int("width"), h = read_int("height"), maxval = read_int("maxval");
    if (w <= 0 || h <= 0) throw fail("non-positive dimensions");
    if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval) + " (only 255)");
    if (w * h > (std::int64_t{1} << 28)) throw fail("dimension overflow (" + std::to_string(w) + "x" + std::to_string(h) + ")");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("truncated header");
    ++pos;
    const auto need = static_cast<std::size_t>(w * h * 3);
    if (bytes.size() - pos < need) throw fail("truncated pixel data (" + std::to_string(bytes.size() - pos) + " of " + std::to_string(need) + " bytes)");
    std::vector<double> px(need);
    for (std::size_t i = 0; i < need; ++i) px[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    return Image(h, w, std::move(px));
}

inline Image load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read image '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_ppm(ss.str(), path.string());
}

inline void save_image(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image '" + path.string() + "'");
    const auto bytes = encode_ppm(img);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Geometry helpers

/// Mirror index without edge repetition (..., 2, 1 | 0, 1, 2, ... ).
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

/// Pads bottom/right by reflection.
inline ColorField reflect_pad(const ColorField& f, std::int64_t pad_h, std::int64_t pad_w) {
    ColorField out(f.height + pad_h, f.width + pad_w);
    for (std::int64_t y = 0; y < out.height; ++y)
        for (std::int64_t x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(reflect_index(y, f.height), reflect_index(x, f.width), c);
    return out;
}

inline ColorField crop(const ColorField& f, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
    if (y0 < 0 || x0 < 0 || y0 + h > f.height || x0 + w > f.width) throw ShapeError("crop window exceeds field");
    ColorField out(h, w);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(y0 + y, x0 + x, c);
    return out;
}

// ---------------------------------------------------------------------------
// Tensor conversion ([B,3,H,W], planar)

inline Tensor fields_to_tensor(std::span<const ColorField> fs) {
    if (fs.empty()) throw ShapeError("fields_to_tensor: empty batch");
    const auto H = fs[0].height, W = fs[0].width;
    std::vector<Real> v(static_cast<std::size_t>(fs.size() * 3 * H * W));
    for (std::size_t b = 0; b < fs.size(); ++b) {
        if (fs[b].height != H || fs[b].width != W) throw ShapeError("fields_to_tensor: batch items differ in size");
        for (int c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x)
                    v[static_cast<std::size_t>(((static_cast<std::int64_t>(b) * 3 + c) * H + y) * W + x)] = static_cast<Real>(fs[b].at(y, x, c));
    }
    return Tensor(Shape{static_cast<std::int64_t>(fs.size()), 3, H, W}, std::move(v));
}

inline Tensor images_to_tensor(std::span<const Image> imgs) {
    std::vector<ColorField> fs;
    fs.reserve(imgs.size());
    for (const auto& i : imgs) fs.push_back(i.field());
    return fields_to_tensor(fs);
}

inline ColorField tensor_to_field(const Tensor& t, std::int64_t index = 0) {
    if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("tensor_to_field: expected [B,3,H,W], got " + shape_str(t.shape()));
    const auto H = t.dim(2), W = t.dim(3);
    ColorField f(H, W);
    for (int c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) f.at(y, x, c) = t[((index * 3 + c) * H + y) * W + x];
    return f;
}

inline Image tensor_to_image(const Tensor& t, std::int64_t index = 0) { return Image::clamped(tensor_to_field(t, index)); }

ZID_NAMESPACE_END
