#pragma once

#include "zid/diffusion.hpp"

ZID_NAMESPACE_BEGIN

/// Training-only head attached to the refined bottleneck.
enum class AuxKind { zipph, A, t, A_plus_t, residual, none };

inline AuxKind parse_aux_kind(std::string_view s) {
    if (s == "zipph") return AuxKind::zipph;
    if (s == "A") return AuxKind::A;
    if (s == "t") return AuxKind::t;
    if (s == "A_plus_t") return AuxKind::A_plus_t;
    if (s == "residual") return AuxKind::residual;
    if (s == "none") return AuxKind::none;
    throw ConfigError("unknown aux head kind '" + std::string(s) + "' (expected zipph, A, t, A_plus_t, residual or none)");
}

inline std::string_view to_string(AuxKind k) {
    switch (k) {
        case AuxKind::zipph: return "zipph";
        case AuxKind::A: return "A";
        case AuxKind::t: return "t";
        case AuxKind::A_plus_t: return "A_plus_t";
        case AuxKind::residual: return "residual";
        case AuxKind::none: return "none";
    }
    return "?";
}

/// Ground truth available for synthetic pairs.
struct AuxTargets {
    Tensor airlight;      // [B,3]
    Tensor transmission;  // [B,1,H,W]
    Tensor residual;      // [B,3,H,W], I_h - I_c
};

inline constexpr std::string_view kAuxOwner = "aux";

/// Global airlight regressor: GAP -> Linear -> ReLU -> Linear -> sigmoid.
struct AirlightHead {
    Linear fc1, fc2;
    AirlightHead() = default;
    AirlightHead(ParamStore& ps, const Rng& rng, std::int64_t cb)
        : fc1(ps, rng, "aux.airlight.fc1", cb, std::max<std::int64_t>(1, cb / 2)), fc2(ps, rng, "aux.airlight.fc2", std::max<std::int64_t>(1, cb / 2), 3) {}
    Tensor operator()(const Tensor& fb) const {
        return sigmoid(fc2(relu(fc1(reshape(global_avg_pool(fb), Shape{fb.dim(0), fb.dim(1)})))));
    }
};

/// Transmission map: two 3x3 convs at bottleneck scale, x16 bilinear, sigmoid.
struct TransmissionHead {
    Conv2d conv1, conv2;
    TransmissionHead() = default;
    TransmissionHead(ParamStore& ps, const Rng& rng, std::int64_t cb)
        : conv1(ps, rng, "aux.transmission.conv1", cb, std::max<std::int64_t>(1, cb / 2), 3),
          conv2(ps, rng, "aux.transmission.conv2", std::max<std::int64_t>(1, cb / 2), 1, 3) {}
    Tensor operator()(const Tensor& fb) const { return sigmoid(bilinear_upsample(conv2(leaky_relu(conv1(fb))), 16)); }
};

/// Haze residual: three conv-IN-LeakyReLU layers and a 3-channel conv, x16 bilinear.
struct ResidualHead {
    std::array<Conv2d, 3> conv;
    std::array<InstanceNorm, 3> norm;
    Conv2d out;
    ResidualHead() = default;
    ResidualHead(ParamStore& ps, const Rng& rng, std::int64_t cb) {
        const auto w = std::max<std::int64_t>(1, cb / 2);
        for (int i = 0; i < 3; ++i) {
            const std::string p = "aux.residual.conv" + std::to_string(i + 1);
            conv[i] = Conv2d(ps, rng, p, i == 0 ? cb : w, w, 3);
            norm[i] = InstanceNorm(ps, p + ".norm", w);
        }
        out = Conv2d(ps, rng, "aux.residual.out", w, 3, 3);
    }
    Tensor operator()(const Tensor& fb) const {
        Tensor h = fb;
        for (int i = 0; i < 3; ++i) h = leaky_relu(norm[i](conv[i](h)));
        return bilinear_upsample(out(h), 16);
    }
};

/// The supervised alternatives (A, t, A_plus_t, residual).
class AuxHead {
public:
    AuxHead(ParamStore& ps, const Rng& rng, AuxKind kind, std::int64_t bottleneck) : kind_(kind) {
        const Rng r = rng.split("aux");
        if (kind == AuxKind::A || kind == AuxKind::A_plus_t) airlight_ = AirlightHead(ps, r, bottleneck);
        if (kind == AuxKind::t || kind == AuxKind::A_plus_t) transmission_ = TransmissionHead(ps, r, bottleneck);
        if (kind == AuxKind::residual) residual_ = ResidualHead(ps, r, bottleneck);
        if (kind == AuxKind::zipph || kind == AuxKind::none) throw ConfigError("AuxHead: kind '" + std::string(to_string(kind)) + "' is not a supervised head");
    }

    AuxKind kind() const { return kind_; }

    struct Prediction {
        Tensor airlight, transmission, residual;
    };

    Prediction operator()(const Tensor& fb) const {
        OwnerScope owner(kAuxOwner);
        Prediction p;
        if (airlight_) p.airlight = (*airlight_)(fb);
        if (transmission_) p.transmission = (*transmission_)(fb);
        if (residual_) p.residual = (*residual_)(fb);
        return p;
    }

    /// Sum of L1 losses of whichever outputs this head produces.
    static Tensor loss(const Prediction& p, const AuxTargets& y) {
        OwnerScope owner(kAuxOwner);
        Tensor total;
        auto add_term = [&](const Tensor& pred, const Tensor& target, const char* what) {
            if (!pred.defined()) return;
            if (pred.shape() != target.shape()) throw ShapeError(std::string("aux ") + what + " target shape " + shape_str(target.shape()) + " vs " + shape_str(pred.shape()));
            Tensor l = mean(abs(pred - target));
            total = total.defined() ? total + l : l;
        };
        add_term(p.airlight, y.airlight, "airlight");
        add_term(p.transmission, y.transmission, "transmission");
        add_term(p.residual, y.residual, "residual");
        return total;
    }

private:
    AuxKind kind_;
    std::optional<AirlightHead> airlight_;
    std::optional<TransmissionHead> transmission_;
    std::optional<ResidualHead> residual_;
};

ZID_NAMESPACE_END
