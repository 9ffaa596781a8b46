#pragma once

// Scalar precision is a compile-time switch. Defining ZID_DOUBLE_PRECISION
// selects f64 storage; the default is f32. Every entity lives in a
// precision-tagged inline namespace so f32 and f64 translation units can be
// linked into one binary without ODR clashes.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef ZID_DOUBLE_PRECISION
#define ZID_PRECISION_NS p64
#else
#define ZID_PRECISION_NS p32
#endif

#define ZID_NAMESPACE_BEGIN \
    namespace zid {         \
    inline namespace ZID_PRECISION_NS {
#define ZID_NAMESPACE_END \
    }                     \
    }

ZID_NAMESPACE_BEGIN

#ifdef ZID_DOUBLE_PRECISION
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::int64_t>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents. The message names the offending dimension.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Misuse of the autodiff graph (non-scalar loss, released graph, ...).
class GraphError : public Error {
public:
    using Error::Error;
};

/// Bad configuration value or unknown key. CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable, malformed or mismatched data files. CLI exit code 3.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values during training. CLI exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

ZID_NAMESPACE_END
