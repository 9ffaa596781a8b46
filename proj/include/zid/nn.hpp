#pragma once

#include <map>
#include <string>

#include "zid/nn_ops.hpp"
#include "zid/rng.hpp"

ZID_NAMESPACE_BEGIN

/// Named learnable tensors. Iteration is lexicographic by dotted name, which
/// fixes the order of optimizer updates and of serialized entries.
class ParamStore {
public:
    /// Registers a parameter. Values are drawn from a stream keyed by the
    /// full name, so initialization does not depend on registration order.
    Tensor& add(const std::string& name, Shape shape) {
        if (params_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        Tensor t(std::move(shape));
        t.set_requires_grad(true);
        return params_.emplace(name, std::move(t)).first->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

    const std::map<std::string, Tensor>& all() const { return params_; }
    std::map<std::string, Tensor>& all() { return params_; }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& [_, t] : params_) n += t.numel();
        return n;
    }

    void set_requires_grad(bool on) {
        for (auto& [_, t] : params_) t.set_requires_grad(on);
    }

private:
    std::map<std::string, Tensor> params_;
};

namespace init {

inline void uniform(Tensor& t, Rng rng, double bound) {
    for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(-bound, bound));
}
inline void constant(Tensor& t, double value) {
    for (auto& v : t.mutable_data()) v = static_cast<Real>(value);
}
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void fan_in_uniform(Tensor& t, Rng rng, std::int64_t fan_in) { uniform(t, rng, 1.0 / std::sqrt(static_cast<double>(fan_in))); }

}  // namespace init

/// Convolution layer: weight `<name>.weight`, optional bias `<name>.bias`
/// (zero-initialized).
struct Conv2d {
    Tensor weight, bias;
    Conv2dOptions opt;

    Conv2d() = default;
    Conv2d(ParamStore& ps, const Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k,
           std::int64_t stride = 1, std::int64_t groups = 1, bool with_bias = true)
        : opt{stride, k / 2, groups} {
        weight = ps.add(name + ".weight", Shape{out, in / groups, k, k});
        init::fan_in_uniform(weight, rng.split(name + ".weight"), in / groups * k * k);
        if (with_bias) bias = ps.add(name + ".bias", Shape{out});
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, opt); }
    std::int64_t out_channels() const { return weight.dim(0); }
};

struct Linear {
    Tensor weight, bias;

    Linear() = default;
    Linear(ParamStore& ps, const Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, bool with_bias = true) {
        weight = ps.add(name + ".weight", Shape{out, in});
        init::fan_in_uniform(weight, rng.split(name + ".weight"), in);
        if (with_bias) bias = ps.add(name + ".bias", Shape{out});
    }

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

/// Affine instance normalization (gamma = 1, beta = 0 at init).
struct InstanceNorm {
    Tensor gamma, beta;

    InstanceNorm() = default;
    InstanceNorm(ParamStore& ps, const std::string& name, std::int64_t channels) {
        gamma = ps.add(name + ".gamma", Shape{channels});
        init::constant(gamma, 1.0);
        beta = ps.add(name + ".beta", Shape{channels});
    }

    Tensor operator()(const Tensor& x) const { return instance_norm(x, gamma, beta); }
};

/// Conv3x3 - InstanceNorm - LeakyReLU - Conv3x3, plus identity.
struct ResBlock {
    Conv2d conv1, conv2;
    InstanceNorm norm;

    ResBlock() = default;
    ResBlock(ParamStore& ps, const Rng& rng, const std::string& name, std::int64_t channels)
        : conv1(ps, rng, name + ".conv1", channels, channels, 3),
          conv2(ps, rng, name + ".conv2", channels, channels, 3),
          norm(ps, name + ".norm", channels) {}

    Tensor operator()(const Tensor& x) const { return x + conv2(leaky_relu(norm(conv1(x)))); }
};

/// Reshapes a [B,C] tensor to [B,C,1,1] for broadcasting over planes.
inline Tensor as_planes(const Tensor& v) { return reshape(v, Shape{v.dim(0), v.dim(1), 1, 1}); }

ZID_NAMESPACE_END
