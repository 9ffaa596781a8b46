#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "zid/nn.hpp"

ZID_NAMESPACE_BEGIN

/// On-disk parameter container:
///   "ZIDW" | u32 version | u32 len + config text | u32 count |
///   count x (u16 len + name | u8 rank | rank x u32 dim | f32 data)
/// All integers and floats little-endian; entries sorted by name.
struct WeightFile {
    static constexpr std::uint32_t kVersion = 1;

    struct Entry {
        Shape shape;
        std::vector<float> data;
    };

    std::string config;
    std::map<std::string, Entry> entries;

    void put(const std::string& name, const Tensor& t) {
        Entry e{t.shape(), {}};
        e.data.reserve(static_cast<std::size_t>(t.numel()));
        for (Real v : t.data()) e.data.push_back(static_cast<float>(v));
        entries[name] = std::move(e);
    }

    void put_params(const ParamStore& ps) {
        for (const auto& [name, t] : ps.all()) put(name, t);
    }
};

/// True for names that belong to training-only state.
inline bool is_training_only(std::string_view name) {
    return name.rfind("zipph.", 0) == 0 || name.rfind("aux.", 0) == 0 || name.rfind("optim.", 0) == 0;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(std::string_view bytes, const std::string& what) : b_(bytes), what_(what) {}
    std::uint64_t uint(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(b_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }
    [[noreturn]] void fail(const std::string& msg) const { throw DataError(what_ + ": " + msg); }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) fail("truncated weight file");
    }
    std::string_view b_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_weights(const WeightFile& wf) {
    std::string out = "ZIDW";
    detail::put_u32(out, WeightFile::kVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(wf.config.size()));
    out += wf.config;
    detail::put_u32(out, static_cast<std::uint32_t>(wf.entries.size()));
    for (const auto& [name, e] : wf.entries) {
        if (name.size() > 0xffff) throw DataError("parameter name too long: " + name.substr(0, 40));
        out.push_back(static_cast<char>(name.size() & 0xff));
        out.push_back(static_cast<char>(name.size() >> 8));
        out += name;
        out.push_back(static_cast<char>(e.shape.size()));
        for (auto d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : e.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline WeightFile decode_weights(std::string_view bytes, const std::string& what = "<memory>") {
    detail::Reader r(bytes, what);
    if (r.str(4) != "ZIDW") r.fail("bad magic (expected ZIDW)");
    if (const auto v = r.uint(4); v != WeightFile::kVersion) r.fail("unsupported format version " + std::to_string(v));
    WeightFile wf;
    wf.config = r.str(static_cast<std::size_t>(r.uint(4)));
    const auto count = r.uint(4);
    std::string prev;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.str(static_cast<std::size_t>(r.uint(2)));
        if (i > 0 && !(prev < name)) r.fail("entries not sorted or duplicated at '" + name + "'");
        WeightFile::Entry e;
        const auto rank = r.uint(1);
        std::uint64_t n = 1;
        for (std::uint64_t k = 0; k < rank; ++k) {
            e.shape.push_back(static_cast<std::int64_t>(r.uint(4)));
            n *= static_cast<std::uint64_t>(e.shape.back());
            if (n > (std::uint64_t{1} << 32)) r.fail("entry '" + name + "' too large");
        }
        e.data.resize(static_cast<std::size_t>(n));
        for (auto& v : e.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
        prev = name;
        wf.entries.emplace(std::move(name), std::move(e));
    }
    if (!r.done()) r.fail("trailing bytes after last entry");
    return wf;
}

inline void save_weights(const WeightFile& wf, const std::filesystem::path& path) {
    const auto bytes = encode_weights(wf);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write weight file '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline WeightFile load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read weight file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_weights(ss.str(), path.string());
}

enum class LoadMode {
    inference,  // skips zipph./aux./optim. entries
    training,   // every parameter of the store must be present
};

/// Copies entries into the existing tensors of `ps` (handles stay valid).
inline void load_params(ParamStore& ps, const WeightFile& wf, LoadMode mode) {
    for (const auto& [name, e] : wf.entries) {
        if (name.rfind("optim.", 0) == 0) continue;
        if (mode == LoadMode::inference && is_training_only(name)) continue;
        if (!ps.contains(name)) throw DataError("weight file has unexpected parameter '" + name + "'");
    }
    for (auto& [name, t] : ps.all()) {
        auto it = wf.entries.find(name);
        if (it == wf.entries.end()) throw DataError("weight file lacks parameter '" + name + "'");
        if (it->second.shape != t.shape())
            throw DataError("parameter '" + name + "' has shape " + shape_str(it->second.shape) + ", expected " + shape_str(t.shape()));
        auto dst = t.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(it->second.data[i]);
    }
}

/// Copy without training-only entries.
inline WeightFile strip_training_only(const WeightFile& wf) {
    WeightFile out;
    out.config = wf.config;
    for (const auto& [name, e] : wf.entries)
        if (!is_training_only(name)) out.entries.emplace(name, e);
    return out;
}

ZID_NAMESPACE_END
