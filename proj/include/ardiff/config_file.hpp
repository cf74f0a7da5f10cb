#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ardiff/backbone.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/objectives.hpp"
#include "ardiff/sampler.hpp"
#include "ardiff/synthetic.hpp"
#include "ardiff/trainer.hpp"

namespace ardiff {

// Flat `key = value` config. `#` starts a comment, blank lines are skipped,
// keys are namespaced with dots (model.hidden, train.steps, ...). Every key
// must be consumed by a reader; leftovers are reported as unknown keys.
class ConfigFile {
public:
    ConfigFile() = default;

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse_text(ss.str(), path);
    }

    static ConfigFile parse_text(const std::string& text, const std::string& origin = "<string>") {
        ConfigFile cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.values_.count(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        return it->second;
    }

    int get_int(const std::string& key, int fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        try {
            size_t pos = 0;
            const int v = std::stoi(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key " + key + ": expected integer, got '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key " + key + ": expected number, got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        const std::string& s = it->second;
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw ConfigError("key " + key + ": expected boolean, got '" + s + "'");
    }

    // Comma-separated integer list, e.g. "1,2,4".
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        std::vector<int> out;
        std::istringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string t = trim(item);
            if (t.empty()) throw ConfigError("key " + key + ": empty list element");
            try {
                size_t pos = 0;
                out.push_back(std::stoi(t, &pos));
                if (pos != t.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("key " + key + ": expected integer list, got '" + it->second + "'");
            }
        }
        return out;
    }

    std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        std::vector<double> out;
        std::istringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string t = trim(item);
            if (t.empty()) throw ConfigError("key " + key + ": empty list element");
            try {
                size_t pos = 0;
                out.push_back(std::stod(t, &pos));
                if (pos != t.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("key " + key + ": expected number list, got '" + it->second + "'");
            }
        }
        return out;
    }

    // Call after all readers ran; throws if the file held keys nobody asked for.
    void check_consumed() const {
        std::vector<std::string> unknown;
        for (const auto& [k, v] : values_)
            if (!consumed_.count(k)) unknown.push_back(k);
        if (!unknown.empty()) {
            std::string msg = "unknown config key(s):";
            for (const auto& k : unknown) msg += " " + k;
            throw ConfigError(msg);
        }
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

inline TowerMode parse_towers(const std::string& s) {
    if (s == "shared") return TowerMode::Shared;
    if (s == "separate") return TowerMode::Separate;
    throw ConfigError("model.towers: expected 'shared' or 'separate', got '" + s + "'");
}

inline MaskMode parse_mask_mode(const std::string& s) {
    if (s == "full") return MaskMode::Full;
    if (s == "mlp") return MaskMode::MlpAblation;
    throw ConfigError("model.mask_mode: expected 'full' or 'mlp', got '" + s + "'");
}

inline ModelConfig read_model_config(const ConfigFile& cfg) {
    ModelConfig m;
    m.vocab = cfg.get_int("model.vocab", m.vocab);
    m.hidden = cfg.get_int("model.hidden", m.hidden);
    m.n_layers = cfg.get_int("model.n_layers", m.n_layers);
    m.diffusion_depth = cfg.get_int("model.diffusion_depth", m.diffusion_depth);
    m.n_heads = cfg.get_int("model.n_heads", m.n_heads);
    m.ffn_hidden = cfg.get_int("model.ffn_hidden", m.ffn_hidden);
    m.channels = cfg.get_int("model.channels", m.channels);
    m.max_text_len = cfg.get_int("model.max_text_len", m.max_text_len);
    m.grid_h = cfg.get_int("model.grid_h", m.grid_h);
    m.grid_w = cfg.get_int("model.grid_w", m.grid_w);
    m.ar_length = cfg.get_int("model.ar_length", m.ar_length);
    m.clean_blocks = cfg.get_bool("model.clean_blocks", m.clean_blocks);
    m.ar_condition = cfg.get_bool("model.ar_condition", m.ar_condition);
    m.towers = parse_towers(cfg.get_string("model.towers", m.towers == TowerMode::Shared ? "shared" : "separate"));
    m.mask_mode = parse_mask_mode(cfg.get_string("model.mask_mode", m.mask_mode == MaskMode::Full ? "full" : "mlp"));
    m.rope_theta = cfg.get_double("model.rope_theta", m.rope_theta);
    m.rms_eps = cfg.get_double("model.rms_eps", m.rms_eps);
    m.init_std = cfg.get_double("model.init_std", m.init_std);
    m.validate();
    return m;
}

inline LossWeights read_loss_weights(const ConfigFile& cfg) {
    LossWeights w;
    w.text = cfg.get_double("loss.lambda_text", w.text);
    w.image = cfg.get_double("loss.lambda_image", w.image);
    w.hidden = cfg.get_double("loss.lambda_hidden", w.hidden);
    w.tower = cfg.get_double("loss.lambda_tower", w.tower);
    w.validate();
    return w;
}

inline SyntheticSpec read_synthetic_spec(const ConfigFile& cfg, const ModelConfig& m) {
    SyntheticSpec s;
    s.grid_h = m.grid_h;
    s.grid_w = m.grid_w;
    s.channels = m.channels;
    s.ar_length = m.ar_length;
    s.n_classes = cfg.get_int("data.n_classes", s.n_classes);
    s.corr = cfg.get_double("data.corr", s.corr);
    s.noise_floor = cfg.get_double("data.noise_floor", s.noise_floor);
    s.anchor_scale = cfg.get_double("data.anchor_scale", s.anchor_scale);
    s.chain_scale = cfg.get_double("data.chain_scale", s.chain_scale);
    s.texture_scale = cfg.get_double("data.texture_scale", s.texture_scale);
    s.validate(m.vocab);
    return s;
}

inline TrainConfig read_train_config(const ConfigFile& cfg, const ModelConfig& m) {
    TrainConfig t;
    t.steps = cfg.get_int("train.steps", t.steps);
    t.batch_size = cfg.get_int("train.batch_size", t.batch_size);
    t.peak_lr = cfg.get_double("train.peak_lr", t.peak_lr);
    t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
    t.warmup_frac = cfg.get_double("train.warmup_frac", t.warmup_frac);
    t.decay_frac = cfg.get_double("train.decay_frac", t.decay_frac);
    t.ema_decay = cfg.get_double("train.ema_decay", t.ema_decay);
    t.grad_clip = cfg.get_double("train.grad_clip", t.grad_clip);
    t.seed = static_cast<uint64_t>(cfg.get_int("train.seed", static_cast<int>(t.seed)));
    t.checkpoint_every = cfg.get_int("train.checkpoint_every", t.checkpoint_every);
    t.T = cfg.get_int("train.T", t.T);
    t.beta_start = cfg.get_double("train.beta_start", t.beta_start);
    t.beta_end = cfg.get_double("train.beta_end", t.beta_end);
    t.prefetch = cfg.get_int("train.prefetch", t.prefetch);
    t.text_only = cfg.get_bool("train.text_only", t.text_only);
    t.keep_snapshots = cfg.get_bool("train.keep_snapshots", t.keep_snapshots);
    t.out_dir = cfg.get_string("train.out_dir", t.out_dir);
    t.loss = read_loss_weights(cfg);
    t.data = read_synthetic_spec(cfg, m);
    t.validate();
    return t;
}

inline SamplerConfig read_sampler_config(const ConfigFile& cfg) {
    SamplerConfig s;
    s.steps = cfg.get_int("sampler.steps", s.steps);
    s.use_ema = cfg.get_bool("sampler.use_ema", s.use_ema);
    s.seed = static_cast<uint64_t>(cfg.get_int("sampler.seed", static_cast<int>(s.seed)));
    s.clean_blocks = cfg.get_bool("sampler.clean_blocks", s.clean_blocks);
    s.ar_condition = cfg.get_bool("sampler.ar_condition", s.ar_condition);
    s.validate();
    return s;
}

}  // namespace ardiff
