#pragma once

#include <Eigen/QR>

#include "zid/nn.hpp"

ZID_NAMESPACE_BEGIN

struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 0.1;
    double lambda3 = 0.35;
};

/// Mean absolute difference.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw ShapeError("l1_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    return mean(abs(pred - target));
}

/// Mean |eps_hat - eps|.
inline Tensor diffusion_loss(const Tensor& eps_hat, const Tensor& eps) {
    if (eps_hat.shape() != eps.shape()) throw ShapeError("diffusion_loss: " + shape_str(eps_hat.shape()) + " vs " + shape_str(eps.shape()));
    return mean(abs(eps_hat - eps));
}

/// Frozen feature extractor: three Conv3x3 - ReLU - AvgDown2 levels with
/// seeded orthogonal weights. Weights never require gradients; gradients
/// flow through the features into the input.
class PerceptualStack {
public:
    static constexpr std::array<std::int64_t, 3> kWidths{16, 32, 64};

    explicit PerceptualStack(std::uint64_t seed = 0x5eed, std::array<double, 3> level_weights = {1.0, 0.5, 0.25})
        : level_weights_(level_weights) {
        Rng rng(seed);
        std::int64_t in = 3;
        for (std::size_t l = 0; l < kWidths.size(); ++l) {
            weights_[l] = orthogonal_conv(kWidths[l], in, rng.split(l));
            in = kWidths[l];
        }
    }

    const std::array<double, 3>& level_weights() const { return level_weights_; }
    const std::array<Tensor, 3>& weights() const { return weights_; }

    std::vector<Tensor> features(const Tensor& img) const {
        const auto need = std::int64_t{1} << kWidths.size();
        if (img.dim(2) < need || img.dim(3) < need || img.dim(2) % need || img.dim(3) % need)
            throw ShapeError("perceptual stack: image " + shape_str(img.shape()) + " must have spatial dims divisible by " + std::to_string(need));
        std::vector<Tensor> out;
        Tensor h = img;
        for (const auto& w : weights_) {
            h = avg_downsample(relu(conv2d(h, w, Tensor(), {1, 1, 1})), 2);
            out.push_back(h);
        }
        return out;
    }

private:
    /// Rows of the [out, in*9] weight matrix are orthonormal (He gain).
    static Tensor orthogonal_conv(std::int64_t out, std::int64_t in, Rng rng) {
        const std::int64_t k = in * 9;
        Eigen::MatrixXd g(k, out);
        for (std::int64_t j = 0; j < out; ++j)
            for (std::int64_t i = 0; i < k; ++i) g(i, j) = rng.normal();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(k, out);
        // Fix column signs so the result is a deterministic function of g.
        const Eigen::MatrixXd r = qr.matrixQR().topRows(out).triangularView<Eigen::Upper>();
        for (std::int64_t j = 0; j < out; ++j)
            if (r(j, j) < 0) q.col(j) *= -1;
        std::vector<Real> v(static_cast<std::size_t>(out * k));
        for (std::int64_t o = 0; o < out; ++o)
            for (std::int64_t i = 0; i < k; ++i) v[static_cast<std::size_t>(o * k + i)] = static_cast<Real>(std::sqrt(2.0) * q(i, o));
        return Tensor(Shape{out, in, 3, 3}, std::move(v));
    }

    std::array<Tensor, 3> weights_;
    std::array<double, 3> level_weights_;
};

inline constexpr double kContrastEps = 1e-7;

/// Sum over levels of w_l * d(pred, clean) / (d(pred, hazy) + d(pred, noisy) + eps),
/// d = mean absolute feature difference. Only `pred` receives gradients.
inline Tensor contrastive_loss(const Tensor& pred, const Tensor& clean, const Tensor& hazy, const Tensor& noisy_hazy,
                               const PerceptualStack& stack) {
    for (const Tensor* t : {&clean, &hazy, &noisy_hazy})
        if (t->shape() != pred.shape()) throw ShapeError("contrastive_loss: " + shape_str(t->shape()) + " vs " + shape_str(pred.shape()));
    std::vector<Tensor> fc, fh, fn;
    {
        NoGradGuard ng;
        fc = stack.features(clean.detach());
        fh = stack.features(hazy.detach());
        fn = stack.features(noisy_hazy.detach());
    }
    const auto fp = stack.features(pred);
    Tensor total;
    for (std::size_t l = 0; l < fp.size(); ++l) {
        Tensor num = mean(abs(fp[l] - fc[l]));
        Tensor den = add_scalar(mean(abs(fp[l] - fh[l])) + mean(abs(fp[l] - fn[l])), Real(kContrastEps));
        Tensor term = scale(num / den, static_cast<Real>(stack.level_weights()[l]));
        total = total.defined() ? total + term : term;
    }
    return total;
}

struct LossParts {
    Tensor l1, contrast, diff;
};

/// lambda1 * L1 + lambda2 * L_contrast + lambda3 * L_diff. A missing diff part counts as 0.
inline Tensor total_loss(const LossParts& p, const LossWeights& w) {
    Tensor t = scale(p.l1, static_cast<Real>(w.lambda1)) + scale(p.contrast, static_cast<Real>(w.lambda2));
    if (p.diff.defined()) t = t + scale(p.diff, static_cast<Real>(w.lambda3));
    return t;
}

inline double total_loss(double l1, double contrast, double diff, const LossWeights& w) {
    return w.lambda1 * l1 + w.lambda2 * contrast + w.lambda3 * diff;
}

ZID_NAMESPACE_END
