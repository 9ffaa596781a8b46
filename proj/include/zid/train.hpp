#pragma once

#include <cstdio>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>

#include "zid/aux_heads.hpp"
#include "zid/backbone.hpp"
#include "zid/config.hpp"
#include "zid/data.hpp"
#include "zid/losses.hpp"
#include "zid/metrics.hpp"
#include "zid/weights.hpp"

ZID_NAMESPACE_BEGIN

struct TrainConfig {
    BackboneConfig backbone;
    ZipphConfig zipph;
    AuxKind aux = AuxKind::zipph;
    int diffusion_steps = 1000;
    double beta_start = 1e-4, beta_end = 0.02;
    SeverityConfig severity;
    LossWeights weights;
    std::uint64_t perceptual_seed = 1234;
    std::array<double, 3> perceptual_weights{1.0, 0.5, 0.25};
    std::int64_t num_pairs = 8, source_size = 64, crop_size = 64, batch_size = 8;
    bool augment = true;
    AugmentConfig aug;
    double lr = 1e-4;
    std::int64_t total_steps = 3000, checkpoint_every = 500;
    std::uint64_t seed = 0;

    void validate() const {
        backbone.validate();
        if (crop_size % 16 || crop_size <= 0) throw ConfigError("crop_size must be a positive multiple of 16");
        if (source_size < crop_size) throw ConfigError("source_size must be >= crop_size");
        if (source_size % 16) throw ConfigError("source_size must be a multiple of 16");
        if (num_pairs < 1 || batch_size < 1 || total_steps < 1) throw ConfigError("num_pairs, batch_size and total_steps must be positive");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
        if (!(lr > 0)) throw ConfigError("lr must be positive");
        if (weights.lambda1 < 0 || weights.lambda2 < 0 || weights.lambda3 < 0) throw ConfigError("loss weights must be non-negative");
        if (!(aug.scale_min > 0 && aug.scale_min <= aug.scale_max)) throw ConfigError("scale range must satisfy 0 < scale_min <= scale_max");
    }
};

inline BackboneConfig backbone_config_from(const Config& c) {
    BackboneConfig b;
    b.base_channels = c.get_int("base_channels");
    b.num_lgcb = c.get_int("num_lgcb");
    b.gdfn_expansion = c.get_double("gdfn_expansion");
    b.se_reduction = c.get_int("se_reduction");
    b.cslm_mlp_reduction = c.get_int("cslm_mlp_reduction");
    b.hf_kind = parse_hf_kind(c.get("hf_kind"));
    b.validate();
    return b;
}

inline TrainConfig train_config_from(const Config& c) {
    TrainConfig t;
    t.backbone = backbone_config_from(c);
    t.zipph.cond_channels = c.get_int("zipph_cond_channels");
    t.zipph.embed_dim = static_cast<int>(c.get_int("zipph_embed_dim"));
    t.zipph.base_width = c.get_int("zipph_base_width");
    t.aux = parse_aux_kind(c.get("aux_head"));
    t.diffusion_steps = static_cast<int>(c.get_int("diffusion_steps"));
    t.beta_start = c.get_double("beta_start");
    t.beta_end = c.get_double("beta_end");
    t.severity.t_low = static_cast<int>(c.get_int("t_low"));
    t.severity.gamma = c.get_double("severity_gamma");
    t.weights = {c.get_double("lambda1"), c.get_double("lambda2"), c.get_double("lambda3")};
    t.perceptual_seed = static_cast<std::uint64_t>(c.get_int("perceptual_seed"));
    const auto pw = c.get_list("perceptual_weights");
    if (pw.size() != 3) throw ConfigError("perceptual_weights needs exactly 3 values");
    t.perceptual_weights = {pw[0], pw[1], pw[2]};
    t.num_pairs = c.get_int("num_pairs");
    t.source_size = c.get_int("source_size");
    t.crop_size = c.get_int("crop_size");
    t.augment = c.get_bool("augment");
    t.aug = {c.get_double("scale_min"), c.get_double("scale_max")};
    t.batch_size = c.get_int("batch_size");
    t.lr = c.get_double("lr");
    t.total_steps = c.get_int("total_steps");
    t.checkpoint_every = c.get_int("checkpoint_every");
    t.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Optimization

inline double cosine_lr(std::int64_t step, std::int64_t total, double lr0) {
    if (step < 0 || step > total) throw ConfigError("cosine_lr: step outside [0, total]");
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

/// Bias-corrected Adam. Parameters without a gradient from the latest
/// backward pass are treated as having a zero gradient.
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void step(ParamStore& ps, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_)), c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (auto& [name, p] : ps.all()) {
            auto& st = state_[name];
            const auto n = static_cast<std::size_t>(p.numel());
            if (st.m.empty()) st.m.assign(n, 0.0f), st.v.assign(n, 0.0f);
            auto w = p.mutable_data();
            const bool has = p.has_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
                const double m = beta1 * st.m[i] + (1 - beta1) * g;
                const double v = beta2 * st.v[i] + (1 - beta2) * g * g;
                st.m[i] = static_cast<float>(m);
                st.v[i] = static_cast<float>(v);
                w[i] = static_cast<Real>(static_cast<double>(w[i]) - lr * (m / c1) / (std::sqrt(v / c2) + eps));
            }
        }
    }

    std::int64_t steps() const { return t_; }

    /// Moments are kept in f32 so that they round-trip through weight files.
    void save(WeightFile& wf) const {
        wf.entries["optim.step"] = {Shape{1}, {static_cast<float>(t_)}};
        for (const auto& [name, st] : state_) {
            const Shape s{static_cast<std::int64_t>(st.m.size())};
            wf.entries["optim." + name + ".m"] = {s, st.m};
            wf.entries["optim." + name + ".v"] = {s, st.v};
        }
    }

    void load(const WeightFile& wf, const ParamStore& ps) {
        auto it = wf.entries.find("optim.step");
        if (it == wf.entries.end()) throw DataError("checkpoint lacks optimizer state");
        t_ = static_cast<std::int64_t>(it->second.data.at(0));
        state_.clear();
        for (const auto& [name, p] : ps.all()) {
            auto m = wf.entries.find("optim." + name + ".m"), v = wf.entries.find("optim." + name + ".v");
            if (m == wf.entries.end() || v == wf.entries.end()) throw DataError("checkpoint lacks optimizer moments for '" + name + "'");
            if (static_cast<std::int64_t>(m->second.data.size()) != p.numel()) throw DataError("optimizer moment size mismatch for '" + name + "'");
            state_[name] = {m->second.data, v->second.data};
        }
    }

private:
    struct Moments {
        std::vector<float> m, v;
    };
    std::int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

// ---------------------------------------------------------------------------

struct StepParts {
    double l1 = 0, contrast = 0, diff = 0, total = 0;
};

inline std::string format_log_line(std::int64_t step, const StepParts& p) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld\t%.6f\t%.6f\t%.6f\t%.6f", static_cast<long long>(step), p.l1, p.contrast, p.diff, p.total);
    return buf;
}

/// Per-pair seed of the synthetic training set.
inline std::uint64_t pair_seed(std::uint64_t seed, std::int64_t index) { return Rng(seed).split("data").split(static_cast<std::uint64_t>(index)).next_u64(); }

/// Backbone plus whichever training-only head the config selects, with the
/// synthetic data set, objective and optimizer state.
class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg, std::string config_text = "")
        : cfg_(cfg), config_text_(std::move(config_text)), sched_(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end),
          perceptual_(cfg.perceptual_seed, cfg.perceptual_weights) {
        cfg_.validate();
        const Rng root(cfg_.seed);
        backbone_ = std::make_unique<Backbone>(params_, root, cfg_.backbone);
        if (cfg_.aux == AuxKind::zipph) zipph_ = std::make_unique<Zipph>(params_, root, cfg_.backbone.bottleneck(), cfg_.zipph);
        else if (cfg_.aux != AuxKind::none) aux_ = std::make_unique<AuxHead>(params_, root, cfg_.aux, cfg_.backbone.bottleneck());
        for (std::int64_t i = 0; i < cfg_.num_pairs; ++i) data_.push_back(gen_pair(pair_seed(cfg_.seed, i), cfg_.source_size, cfg_.source_size));
    }

    const TrainConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const Backbone& backbone() const { return *backbone_; }
    Zipph* zipph() { return zipph_.get(); }
    const std::vector<HazyCleanPair>& dataset() const { return data_; }
    std::int64_t step() const { return step_; }
    const Adam& optimizer() const { return adam_; }

    /// Pairs of training step `step` (1-based), augmented.
    std::vector<HazyCleanPair> batch(std::int64_t step) const {
        std::vector<HazyCleanPair> b;
        const Rng aug_root = Rng(cfg_.seed).split("augment").split(static_cast<std::uint64_t>(step));
        for (std::int64_t k = 0; k < cfg_.batch_size; ++k) {
            const auto& src = data_[static_cast<std::size_t>(((step - 1) * cfg_.batch_size + k) % cfg_.num_pairs)];
            if (cfg_.augment) b.push_back(augment(src, aug_root.split(static_cast<std::uint64_t>(k)), cfg_.crop_size, cfg_.aug));
            else b.push_back(src);
        }
        return b;
    }

    /// One optimization step; returns the loss parts of this step.
    StepParts train_step() {
        const std::int64_t s = step_ + 1;
        const auto pairs = batch(s);
        std::vector<Image> hazy, clean;
        for (const auto& p : pairs) hazy.push_back(p.hazy), clean.push_back(p.clean);
        const Tensor th = images_to_tensor(hazy), tc = images_to_tensor(clean);
        const Tensor hf = hf_tensor(hazy, cfg_.backbone.hf_kind);

        // Severity-capped forward perturbation of the degradation residual.
        Rng noise = Rng(cfg_.seed).split("noise").split(static_cast<std::uint64_t>(s));
        const Tensor r = (th - tc).detach();
        const auto caps = severity_caps(severity_scores(hazy, clean).normalized, cfg_.severity, sched_.T());
        const auto t = sample_timesteps(caps, noise);
        const Tensor eps = normal_tensor(r.shape(), noise);
        const Tensor r_t = forward_diffuse(r, t, eps, sched_);
        const Tensor noisy_hazy = clamp01(tc + r_t);

        NanWatch watch;
        auto out = backbone_->forward(th, hf, Mode::training);
        LossParts parts;
        parts.l1 = l1_loss(out.image, tc);
        parts.contrast = contrastive_loss(out.image, tc, th, noisy_hazy, perceptual_);
        if (zipph_) {
            parts.diff = diffusion_loss((*zipph_)(r_t, t, out.fb_hat), eps);
        } else if (aux_) {
            parts.diff = AuxHead::loss((*aux_)(out.fb_hat), aux_targets(pairs, r));
        }
        Tensor total = total_loss(parts, cfg_.weights);
        StepParts sp{parts.l1.item(), parts.contrast.item(), parts.diff.defined() ? static_cast<double>(parts.diff.item()) : 0.0, total.item()};
        if (!std::isfinite(sp.total)) {
            const auto op = watch.first_offender();
            throw NumericError("non-finite loss at step " + std::to_string(s) + "; first non-finite op: " + op.value_or("<none recorded>"));
        }
        backward(total);
        adam_.step(params_, cosine_lr(s - 1, cfg_.total_steps, cfg_.lr));
        step_ = s;
        return sp;
    }

    /// Mean PSNR of inference-mode outputs over the (unaugmented) training pairs.
    double training_psnr() const {
        double s = 0;
        for (const auto& p : data_) s += psnr(backbone_->infer(p.hazy), p.clean);
        return s / static_cast<double>(data_.size());
    }

    WeightFile checkpoint() const {
        WeightFile wf;
        wf.config = config_text_;
        wf.put_params(params_);
        adam_.save(wf);
        return wf;
    }

    void restore(const WeightFile& wf) {
        load_params(params_, wf, LoadMode::training);
        adam_.load(wf, params_);
        step_ = adam_.steps();
    }

private:
    static AuxTargets aux_targets(const std::vector<HazyCleanPair>& pairs, const Tensor& residual) {
        const auto B = static_cast<std::int64_t>(pairs.size()), H = pairs[0].clean.height(), W = pairs[0].clean.width();
        std::vector<Real> a, tm;
        for (const auto& p : pairs) {
            for (double v : p.scene.airlight) a.push_back(static_cast<Real>(v));
            for (double v : p.scene.transmission().values) tm.push_back(static_cast<Real>(v));
        }
        return {Tensor(Shape{B, 3}, std::move(a)), Tensor(Shape{B, 1, H, W}, std::move(tm)), residual};
    }

    TrainConfig cfg_;
    std::string config_text_;
    DiffusionSchedule sched_;
    PerceptualStack perceptual_;
    ParamStore params_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<Zipph> zipph_;
    std::unique_ptr<AuxHead> aux_;
    std::vector<HazyCleanPair> data_;
    Adam adam_;
    std::int64_t step_ = 0;
};

/// Runs `trainer` up to `cfg.total_steps`, appending one log line per step,
/// writing `ckpt_<step>.zid` every `checkpoint_every` steps and `final.zid`.
inline void train_loop(Trainer& trainer, const std::filesystem::path& out_dir,
                       const std::function<void(std::int64_t, const StepParts&)>& on_step = {}) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
    std::ofstream log(out_dir / "loss.log", std::ios::app);
    if (!log) throw DataError("cannot open loss log in '" + out_dir.string() + "'");
    const auto& cfg = trainer.config();
    while (trainer.step() < cfg.total_steps) {
        const StepParts p = trainer.train_step();
        const auto s = trainer.step();
        log << format_log_line(s, p) << '\n' << std::flush;
        if (!log) throw DataError("write failed for loss log");
        if (on_step) on_step(s, p);
        if (cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0) save_weights(trainer.checkpoint(), out_dir / ("ckpt_" + std::to_string(s) + ".zid"));
    }
    save_weights(trainer.checkpoint(), out_dir / "final.zid");
}

ZID_NAMESPACE_END
