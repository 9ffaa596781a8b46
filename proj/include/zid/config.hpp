#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "zid/common.hpp"

ZID_NAMESPACE_BEGIN

/// Flat `key = value` configuration. Every key has a default; unknown keys
/// are rejected. Values are validated when read through a typed getter.
class Config {
public:
    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            {"seed", "0"},
            // backbone
            {"base_channels", "8"},
            {"num_lgcb", "4"},
            {"gdfn_expansion", "2.0"},
            {"se_reduction", "8"},
            {"cslm_mlp_reduction", "4"},
            {"hf_kind", "color_laplacian"},
            // training-only head
            {"aux_head", "zipph"},
            {"zipph_cond_channels", "8"},
            {"zipph_embed_dim", "128"},
            {"zipph_base_width", "16"},
            {"diffusion_steps", "1000"},
            {"beta_start", "1e-4"},
            {"beta_end", "0.02"},
            {"t_low", "200"},
            {"severity_gamma", "0.8"},
            // objective
            {"lambda1", "1.0"},
            {"lambda2", "0.1"},
            {"lambda3", "0.35"},
            {"perceptual_seed", "1234"},
            {"perceptual_weights", "1.0,0.5,0.25"},
            // data and optimization
            {"num_pairs", "8"},
            {"source_size", "64"},
            {"crop_size", "64"},
            {"augment", "true"},
            {"scale_min", "0.9"},
            {"scale_max", "1.1"},
            {"batch_size", "8"},
            {"lr", "1e-4"},
            {"total_steps", "3000"},
            {"checkpoint_every", "500"},
            {"out_dir", "run"},
            // benchmarking
            {"bench_resolutions", "256,512"},
            {"bench_runs", "20"},
        };
        return d;
    }

    Config() : values_(defaults()) {}

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    /// Applies a `key=value` override.
    void set_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not of the form key=value");
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    static Config parse(const std::string& text, const std::string& source = "<config>") {
        Config c;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
            try {
                c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
            } catch (const ConfigError& e) {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        return c;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    std::int64_t get_int(const std::string& key) const {
        const auto& s = get(key);
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
        return v;
    }

    double get_double(const std::string& key) const { return parse_double(get(key), key); }

    bool get_bool(const std::string& key) const {
        const auto& s = get(key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
    }

    std::vector<double> get_list(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(get(key));
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), key));
        return out;
    }

    /// All effective values, one `key = value` line each, sorted by key.
    std::string serialize(const std::set<std::string>& skip = {}) const {
        std::string out;
        for (const auto& [k, v] : values_)
            if (!skip.count(k)) out += k + " = " + v + "\n";
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    static double parse_double(const std::string& s, const std::string& key) {
        double v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
        return v;
    }

    std::map<std::string, std::string> values_;
};

ZID_NAMESPACE_END
