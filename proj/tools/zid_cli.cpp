#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>

#include "zid/train.hpp"

using namespace zid;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::string pad = "auto";
};

Config effective_config(const Globals& g, const Config& base = Config()) {
    Config c = g.config_path.empty() ? base : Config::load(g.config_path);
    if (g.seed) c.set("seed", std::to_string(*g.seed));
    for (const auto& kv : g.overrides) c.set_override(kv);
    return c;
}

void echo_config(const Config& c) {
    for (const auto& [k, v] : c.values()) std::cerr << "[config] " << k << " = " << v << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<fs::path> list_images(const fs::path& p) {
    std::vector<fs::path> out;
    if (fs::is_directory(p)) {
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
        std::sort(out.begin(), out.end());
    } else {
        if (!fs::exists(p)) throw DataError("input '" + p.string() + "' does not exist");
        out.push_back(p);
    }
    return out;
}

void make_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw DataError("cannot create directory '" + p.string() + "': " + ec.message());
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Runs the backbone on one image; `pad_auto` reflect-pads to a multiple of 16 and crops back.
Image run_backbone(const Backbone& bb, const Image& img, bool pad_auto) {
    const auto h = img.height(), w = img.width();
    const auto ph = (16 - h % 16) % 16, pw = (16 - w % 16) % 16;
    if ((ph || pw) && !pad_auto)
        throw ShapeError("image is " + std::to_string(h) + "x" + std::to_string(w) + "; dimensions must be divisible by 16 (use --pad auto)");
    if (!ph && !pw) return bb.infer(img);
    const Image padded = Image::clamped(reflect_pad(img.field(), ph, pw));
    return Image::clamped(crop(bb.infer(padded).field(), 0, 0, h, w));
}

// ---------------------------------------------------------------------------

int cmd_train(const Globals& g, const std::string& out_opt, const std::string& resume) {
    Config c = effective_config(g);
    if (!out_opt.empty()) c.set("out_dir", out_opt);
    echo_config(c);
    const auto cfg = train_config_from(c);
    // The output location is not part of the experiment, so it stays out of the weight file.
    Trainer trainer(cfg, c.serialize({"out_dir"}));
    if (!resume.empty()) {
        trainer.restore(load_weights(resume));
        std::cerr << "resumed from " << resume << " at step " << trainer.step() << '\n';
    }
    const fs::path out = c.get("out_dir");
    const auto t0 = std::chrono::steady_clock::now();
    train_loop(trainer, out, [&](std::int64_t s, const StepParts& p) {
        if (s % 100 == 0 || s == cfg.total_steps) std::cerr << format_log_line(s, p) << "\t" << fmt("%.1f", seconds_since(t0)) << "s\n";
    });
    std::cout << "steps\t" << trainer.step() << "\n";
    std::cout << "train_seconds\t" << fmt("%.1f", seconds_since(t0)) << "\n";
    std::cout << "train_psnr\t" << fmt("%.4f", trainer.training_psnr()) << "\n";
    std::cout << "weights\t" << (out / "final.zid").string() << "\n";
    return 0;
}

int cmd_infer(const Globals& g, const std::string& weights, const std::vector<std::string>& inputs, const std::string& out_dir) {
    // Only the backbone is built; training-only entries in the file are skipped.
    const WeightFile wf = load_weights(weights);
    const Config c = effective_config(g, wf.config.empty() ? Config() : Config::parse(wf.config, weights + " (embedded config)"));
    echo_config(c);
    if (g.pad != "auto" && g.pad != "strict") throw ConfigError("--pad must be 'auto' or 'strict'");
    ParamStore ps;
    const Backbone bb(ps, Rng(0), backbone_config_from(c));
    load_params(ps, wf, LoadMode::inference);
    make_dir(out_dir);
    std::vector<fs::path> files;
    for (const auto& in : inputs)
        for (auto& f : list_images(in)) files.push_back(std::move(f));
    if (files.empty()) throw DataError("no input images");
    for (const auto& f : files) {
        const Image img = load_image(f);
        const auto t0 = std::chrono::steady_clock::now();
        const Image out = run_backbone(bb, img, g.pad == "auto");
        const double ms = 1000 * seconds_since(t0);
        save_image(out, fs::path(out_dir) / f.filename());
        std::cout << f.filename().string() << "\t" << img.height() << "x" << img.width() << "\t" << fmt("%.2f", ms) << " ms\n";
    }
    return 0;
}

int cmd_bench(const Globals& g, const std::string& weights) {
    Config c = effective_config(g);
    WeightFile wf;
    if (!weights.empty()) {
        wf = load_weights(weights);
        if (!wf.config.empty()) c = effective_config(g, Config::parse(wf.config, weights + " (embedded config)"));
    }
    echo_config(c);
    const auto bcfg = backbone_config_from(c);
    ParamStore ps;
    const Backbone bb(ps, Rng(static_cast<std::uint64_t>(c.get_int("seed"))), bcfg);
    if (!weights.empty()) load_params(ps, wf, LoadMode::inference);
    const auto runs = c.get_int("bench_runs");
    if (runs < 1) throw ConfigError("bench_runs must be positive");

    struct Row {
        std::int64_t res;
        MacReport macs;
        std::uint64_t measured;
        double mean_ms, median_ms;
    };
    std::vector<Row> rows;
    for (double rd : c.get_list("bench_resolutions")) {
        const auto r = static_cast<std::int64_t>(rd);
        Row row{r, count_macs(bcfg, r, r), 0, 0, 0};
        const Image img = gen_clean_image(Rng(static_cast<std::uint64_t>(r)), r, r);
        {
            MacCounter mc;
            bb.infer(img);
            row.measured = mc.count();
        }
        std::vector<double> ms;
        for (std::int64_t i = 0; i < runs; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            bb.infer(img);
            ms.push_back(1000 * seconds_since(t0));
        }
        row.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
        row.median_ms = median(ms);
        rows.push_back(row);
    }

    std::cout << "resolution\tparams_M\tGMac\tGMac_measured\tlgcb_attention_MMac\tspatial_attention_MMac\tmean_ms\tmedian_ms\n";
    for (const auto& r : rows)
        std::cout << r.res << "x" << r.res << "\t" << fmt("%.4f", static_cast<double>(ps.count()) / 1e6) << "\t"
                  << fmt("%.4f", static_cast<double>(r.macs.total) / 1e9) << "\t" << fmt("%.4f", static_cast<double>(r.measured) / 1e9) << "\t"
                  << fmt("%.4f", static_cast<double>(r.macs.lgcb_attention) / 1e6) << "\t"
                  << fmt("%.4f", static_cast<double>(r.macs.spatial_attention) / 1e6) << "\t" << fmt("%.2f", r.mean_ms) << "\t"
                  << fmt("%.2f", r.median_ms) << "\n";
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto &a = rows[i - 1], &b = rows[i];
        auto ratio = [](std::uint64_t x, std::uint64_t y) { return static_cast<double>(x) / static_cast<double>(y); };
        std::cout << "ratio " << b.res << "/" << a.res << "\ttotal_macs " << fmt("%.4f", ratio(b.macs.total, a.macs.total)) << "\tlgcb_attention "
                  << fmt("%.4f", ratio(b.macs.lgcb_attention, a.macs.lgcb_attention)) << "\tspatial_attention "
                  << fmt("%.4f", ratio(b.macs.spatial_attention, a.macs.spatial_attention)) << "\twall_time " << fmt("%.4f", b.mean_ms / a.mean_ms)
                  << "\n";
    }
    return 0;
}

int cmd_metrics(const std::string& pred_dir, const std::string& ref_dir) {
    std::map<std::string, fs::path> pred, ref;
    for (const auto& p : list_images(pred_dir)) pred[p.filename().string()] = p;
    for (const auto& p : list_images(ref_dir)) ref[p.filename().string()] = p;
    std::vector<std::string> both;
    for (const auto& [name, _] : pred)
        if (ref.count(name)) both.push_back(name);
        else std::cerr << "unmatched in " << pred_dir << ": " << name << '\n';
    for (const auto& [name, _] : ref)
        if (!pred.count(name)) std::cerr << "unmatched in " << ref_dir << ": " << name << '\n';
    if (both.empty()) throw DataError("no file names common to '" + pred_dir + "' and '" + ref_dir + "'");

    MetricReport mean;
    auto line = [](const std::string& name, const MetricReport& m) {
        std::cout << name << "\t" << fmt("%.4f", m.psnr_db) << "\t" << fmt("%.4f", m.ssim) << "\t" << fmt("%.4f", m.delta_e_ab) << "\t"
                  << fmt("%.4f", m.delta_e_00) << "\n";
    };
    for (const auto& name : both) {
        const auto m = compute_metrics(load_image(pred[name]), load_image(ref[name]));
        line(name, m);
        mean.psnr_db += m.psnr_db, mean.ssim += m.ssim, mean.delta_e_ab += m.delta_e_ab, mean.delta_e_00 += m.delta_e_00;
    }
    const double n = static_cast<double>(both.size());
    line("mean", {mean.psnr_db / n, mean.ssim / n, mean.delta_e_ab / n, mean.delta_e_00 / n});
    return 0;
}

int cmd_synth(const Globals& g, std::int64_t n, const std::string& out_dir, std::int64_t size_opt) {
    const Config c = effective_config(g);
    echo_config(c);
    if (n < 1) throw ConfigError("--n must be at least 1");
    const auto size = size_opt > 0 ? size_opt : c.get_int("source_size");
    const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
    make_dir(out_dir);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto p = gen_pair(pair_seed(seed, i), size, size);
        const auto t = p.scene.transmission();
        for (std::int64_t y = 0; y < size; ++y)
            for (std::int64_t x = 0; x < size; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    const double want = std::clamp(p.clean.at(y, x, ch) * t.at(y, x) + p.scene.airlight[ch] * (1 - t.at(y, x)), 0.0, 1.0);
                    if (std::abs(p.hazy.at(y, x, ch) - want) > 1e-9) throw NumericError("pair " + std::to_string(i) + " violates the scattering model");
                }
        const auto stem = fs::path(out_dir);
        save_image(p.clean, stem / ("clean_" + std::to_string(i) + ".ppm"));
        save_image(p.hazy, stem / ("hazy_" + std::to_string(i) + ".ppm"));
        std::ofstream side(stem / ("scene_" + std::to_string(i) + ".txt"));
        side << "airlight = " << fmt("%.17g", p.scene.airlight[0]) << "," << fmt("%.17g", p.scene.airlight[1]) << ","
             << fmt("%.17g", p.scene.airlight[2]) << "\n"
             << "beta_scatter = " << fmt("%.17g", p.scene.beta_scatter) << "\n"
             << "depth_kind = " << to_string(p.scene.depth_kind) << "\n"
             << "seed = " << p.scene.seed << "\n"
             << "size = " << size << "\n";
        if (!side) throw DataError("cannot write scene sidecar in '" + out_dir + "'");
    }
    std::cout << "wrote " << n << " pairs to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-inference dehazing: train, infer, bench, metrics, synth"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "Flat key = value config file");
    app.add_option("--seed", g.seed, "Global seed (overrides the config)");
    app.add_option("--set", g.overrides, "Config override key=value (repeatable)")->take_all();
    app.add_option("--pad", g.pad, "Inference padding: auto (reflect to a multiple of 16) or strict")->check(CLI::IsMember({"auto", "strict"}));

    std::string out_dir, resume, weights;
    std::vector<std::string> inputs;
    std::string pred_dir, ref_dir;
    std::int64_t n = 8, size = 0;

    auto* train = app.add_subcommand("train", "Train the backbone jointly with the configured auxiliary head");
    train->add_option("--out", out_dir, "Output directory (overrides out_dir)");
    train->add_option("--resume", resume, "Checkpoint to resume from");

    auto* infer = app.add_subcommand("infer", "Dehaze PPM images with a trained weight file");
    infer->add_option("--weights", weights, "Weight file")->required();
    infer->add_option("--out", out_dir, "Output directory")->required();
    infer->add_option("inputs", inputs, "Input PPM files or directories")->required();

    auto* bench = app.add_subcommand("bench", "Parameter, MAC and runtime report");
    bench->add_option("--weights", weights, "Optional weight file (random init otherwise)");

    auto* metrics = app.add_subcommand("metrics", "PSNR / SSIM / dE_ab / dE00 between two directories");
    metrics->add_option("pred", pred_dir, "Prediction directory")->required();
    metrics->add_option("ref", ref_dir, "Reference directory")->required();

    auto* synth = app.add_subcommand("synth", "Write synthetic hazy/clean pairs");
    synth->add_option("--n", n, "Number of pairs");
    synth->add_option("--out", out_dir, "Output directory")->required();
    synth->add_option("--size", size, "Image size (default: source_size)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*train) return cmd_train(g, out_dir, resume);
        if (*infer) return cmd_infer(g, weights, inputs, out_dir);
        if (*bench) return cmd_bench(g, weights);
        if (*metrics) return cmd_metrics(pred_dir, ref_dir);
        if (*synth) return cmd_synth(g, n, out_dir, size);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
