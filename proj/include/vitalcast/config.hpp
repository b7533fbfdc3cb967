#pragma once

// Pipeline configuration: a plain-text key-value file with dotted sections,
// environment overrides (VITALCAST_SECTION__KEY=...), and defaults equal to
// the paper-standard constants so a bare run reproduces the reference setup.
// The config hash covers semantic settings only, never filesystem locations,
// so identical runs in different directories chain cleanly.

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "vitalcast/calibration.hpp"
#include "vitalcast/labeling.hpp"
#include "vitalcast/net.hpp"
#include "vitalcast/split.hpp"
#include "vitalcast/synth.hpp"

extern "C" char** environ;

namespace vitalcast {

struct PipelineConfig {
    int utc_offset_minutes = 0;
    std::string data_root;  // user stream directories; empty -> <out>/data
    std::string out_dir = "run";
    std::uint64_t seed = 0;

    EpsilonBands epsilon;
    WindowSet windows;
    LabelingOptions labeling;
    SplitFractions split;
    ModelConfig model;
    CalibrationOptions calibration;
    SynthSpec synth = SynthSpec::defaults();
    RmssdOptions rmssd;
    AlignOptions align;

    void apply_seed() {
        model.seed = seed;
        synth.seed = seed;
    }

    void sync_sections() {
        labeling.epsilon = epsilon;
        labeling.windows = windows;
        labeling.context_minutes = model.context_len;
        model.horizon = windows.horizon();
        calibration.windows = windows;
        calibration.epsilon = epsilon;
        apply_seed();
    }

    void validate() const {
        if (epsilon.rmssd <= 0.0 || epsilon.hr <= 0.0 || epsilon.bbi <= 0.0)
            throw ConfigError("neutrality bands must be positive");
        if (split.test < 0.0 || split.test >= 1.0 || split.validation < 0.0 ||
            split.validation >= 1.0 || split.test + split.validation >= 1.0)
            throw ConfigError("split fractions must lie in [0,1) and sum below 1");
        if (labeling.baseline.min_valid < 1 ||
            labeling.baseline.min_valid > labeling.baseline.window_minutes)
            throw ConfigError("baseline minimum valid minutes must fit the window");
        if (windows.windows[0].lo != 0) throw ConfigError("first window must start at offset 0");
        for (int w = 0; w < 4; ++w) {
            if (windows.windows[static_cast<std::size_t>(w)].length() <= 0)
                throw ConfigError("windows must have positive length");
            if (w > 0 && windows.windows[static_cast<std::size_t>(w)].lo !=
                             windows.windows[static_cast<std::size_t>(w - 1)].hi)
                throw ConfigError("windows must partition the horizon");
        }
        if (calibration.onset_grid_max < 0 || calibration.tau_step <= 0.0 ||
            calibration.tau_min <= 0.0 || calibration.tau_max < calibration.tau_min)
            throw ConfigError("invalid calibration grids");
        model.validate();
        synth.validate();
    }

    // Canonical semantic settings; the fingerprint every artifact embeds.
    std::map<std::string, std::string> canonical() const {
        std::map<std::string, std::string> kv;
        kv["time.utc_offset_minutes"] = std::to_string(utc_offset_minutes);
        kv["seed"] = std::to_string(seed);
        kv["labeling.epsilon_rmssd"] = fmt_double(epsilon.rmssd);
        kv["labeling.epsilon_hr"] = fmt_double(epsilon.hr);
        kv["labeling.epsilon_bbi"] = fmt_double(epsilon.bbi);
        kv["labeling.baseline_minutes"] = std::to_string(labeling.baseline.window_minutes);
        kv["labeling.baseline_min_valid"] = std::to_string(labeling.baseline.min_valid);
        kv["labeling.max_window_gap"] = std::to_string(labeling.max_window_gap);
        std::string edges;
        for (int w = 0; w < 4; ++w) {
            edges += std::to_string(windows.windows[static_cast<std::size_t>(w)].lo) + ",";
        }
        edges += std::to_string(windows.overall.hi);
        kv["windows.edges"] = edges;
        kv["split.test_fraction"] = fmt_double(split.test);
        kv["split.validation_fraction"] = fmt_double(split.validation);
        kv["model.context_minutes"] = std::to_string(model.context_len);
        kv["model.width"] = std::to_string(model.width);
        kv["model.depth"] = std::to_string(model.depth);
        kv["model.heads"] = std::to_string(model.heads);
        kv["model.cat_embed_width"] = std::to_string(model.cat_embed_width);
        kv["model.ffn_mult"] = std::to_string(model.ffn_mult);
        kv["model.include_bbi"] = model.include_bbi ? "true" : "false";
        std::string qs;
        for (std::size_t i = 0; i < model.quantiles.size(); ++i) {
            if (i) qs += ",";
            qs += fmt_double(model.quantiles[i]);
        }
        kv["model.quantiles"] = qs;
        kv["model.w_pinball"] = fmt_double(model.w_pinball);
        kv["model.w_mse"] = fmt_double(model.w_mse);
        kv["model.w_sign"] = fmt_double(model.w_sign);
        kv["model.w_hazard"] = fmt_double(model.w_hazard);
        kv["model.learning_rate"] = fmt_double(model.learning_rate);
        kv["model.batch_size"] = std::to_string(model.batch_size);
        kv["model.max_epochs"] = std::to_string(model.max_epochs);
        kv["model.patience"] = std::to_string(model.patience);
        kv["calibration.onset_grid_max"] = std::to_string(calibration.onset_grid_max);
        kv["calibration.tau_min"] = fmt_double(calibration.tau_min);
        kv["calibration.tau_max"] = fmt_double(calibration.tau_max);
        kv["calibration.tau_step"] = fmt_double(calibration.tau_step);
        kv["rmssd.min_intervals"] = std::to_string(rmssd.min_intervals);
        kv["rmssd.window_ms"] = std::to_string(rmssd.window_ms);
        kv["rmssd.stride_ms"] = std::to_string(rmssd.stride_ms);
        kv["rmssd.max_gap_ms"] = std::to_string(rmssd.max_gap_ms);
        kv["rmssd.adjacency_max_ms"] = std::to_string(rmssd.adjacency_max_ms);
        kv["align.hr_steps_max_gap"] = std::to_string(align.hr_steps_max_gap);
        kv["align.carry_forward_cap"] = std::to_string(align.carry_forward_cap);
        kv["synth.users"] = std::to_string(synth.users);
        kv["synth.days"] = std::to_string(synth.days);
        kv["synth.bbi_mean_ms"] = fmt_double(synth.bbi_mean_ms);
        kv["synth.bbi_circadian_amp_ms"] = fmt_double(synth.bbi_circadian_amp_ms);
        kv["synth.rsa_amp_ms"] = fmt_double(synth.rsa_amp_ms);
        kv["synth.rsa_period_s"] = fmt_double(synth.rsa_period_s);
        kv["synth.noise_scale"] = fmt_double(synth.noise_scale);
        kv["synth.gap_rate_per_day"] = fmt_double(synth.gap_rate_per_day);
        kv["synth.interventions_per_day"] = std::to_string(synth.interventions_per_day);
        kv["synth.beats_per_minute"] = std::to_string(synth.beats_per_minute);
        for (int c = 0; c < kCategoryCount; ++c) {
            const auto& e = synth.effects[static_cast<std::size_t>(c)];
            std::string key = "synth.effect." + std::to_string(c);
            if (!e) {
                kv[key] = "none";
            } else {
                kv[key] = std::string(metric_name(e->target)) + ":" + std::to_string(e->sign) +
                          ":" + fmt_double(e->peak_pct) + ":" + std::to_string(e->onset_min) +
                          ":" + fmt_double(e->decay_min);
            }
        }
        return kv;
    }

    std::string hash() const {
        std::string blob;
        for (const auto& [k, v] : canonical()) {
            blob += k;
            blob += '=';
            blob += v;
            blob += '\n';
        }
        return hex64(fnv1a64(blob));
    }
};

namespace config_detail {

inline std::string trim(std::string s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
    return s;
}

inline std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
    std::map<std::string, std::string> kv;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key = value");
        }
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

// VITALCAST_MODEL__WIDTH=32 becomes model.width = 32.
inline void apply_env_overrides(std::map<std::string, std::string>& kv) {
    for (char** e = environ; e && *e; ++e) {
        std::string entry(*e);
        if (entry.rfind("VITALCAST_", 0) != 0) continue;
        auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(10, eq - 10);
        std::string value = entry.substr(eq + 1);
        std::string dotted;
        for (std::size_t i = 0; i < key.size(); ++i) {
            if (key[i] == '_' && i + 1 < key.size() && key[i + 1] == '_') {
                dotted += '.';
                ++i;
            } else {
                dotted += static_cast<char>(std::tolower(static_cast<unsigned char>(key[i])));
            }
        }
        kv[dotted] = value;
    }
}

inline double need_double(const std::string& key, const std::string& v) {
    auto d = parse_double(v);
    if (!d) throw ConfigError("config key " + key + " needs a number, got '" + v + "'");
    return *d;
}

inline std::int64_t need_int(const std::string& key, const std::string& v) {
    auto i = parse_int(v);
    if (!i) throw ConfigError("config key " + key + " needs an integer, got '" + v + "'");
    return *i;
}

inline bool need_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + " needs true/false, got '" + v + "'");
}

}  // namespace config_detail

// Builds the effective config: defaults, then file settings, then environment
// overrides. Unknown keys are rejected so typos never silently revert to
// defaults.
inline PipelineConfig load_config(const std::optional<std::filesystem::path>& file,
                                  bool with_env = true) {
    using namespace config_detail;
    std::map<std::string, std::string> kv;
    if (file) kv = parse_kv_file(*file);
    if (with_env) apply_env_overrides(kv);

    PipelineConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "time.utc_offset_minutes") cfg.utc_offset_minutes = static_cast<int>(need_int(key, value));
        else if (key == "data.root") cfg.data_root = value;
        else if (key == "out") cfg.out_dir = value;
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(need_int(key, value));
        else if (key == "labeling.epsilon_rmssd") cfg.epsilon.rmssd = need_double(key, value);
        else if (key == "labeling.epsilon_hr") cfg.epsilon.hr = need_double(key, value);
        else if (key == "labeling.epsilon_bbi") cfg.epsilon.bbi = need_double(key, value);
        else if (key == "labeling.baseline_minutes")
            cfg.labeling.baseline.window_minutes = static_cast<int>(need_int(key, value));
        else if (key == "labeling.baseline_min_valid")
            cfg.labeling.baseline.min_valid = static_cast<int>(need_int(key, value));
        else if (key == "labeling.max_window_gap")
            cfg.labeling.max_window_gap = static_cast<int>(need_int(key, value));
        else if (key == "windows.edges") {
            std::vector<int> edges;
            std::string cur;
            for (char c : value + ",") {
                if (c == ',') {
                    if (!cur.empty()) edges.push_back(static_cast<int>(need_int(key, cur)));
                    cur.clear();
                } else {
                    cur += c;
                }
            }
            if (edges.size() != 5) throw ConfigError("windows.edges needs exactly 5 edges");
            for (int w = 0; w < 4; ++w) {
                cfg.windows.windows[static_cast<std::size_t>(w)] =
                    Window{edges[static_cast<std::size_t>(w)], edges[static_cast<std::size_t>(w) + 1]};
            }
            cfg.windows.overall = Window{edges[0], edges[4]};
        } else if (key == "split.test_fraction") cfg.split.test = need_double(key, value);
        else if (key == "split.validation_fraction") cfg.split.validation = need_double(key, value);
        else if (key == "model.context_minutes") cfg.model.context_len = static_cast<int>(need_int(key, value));
        else if (key == "model.width") cfg.model.width = static_cast<int>(need_int(key, value));
        else if (key == "model.depth") cfg.model.depth = static_cast<int>(need_int(key, value));
        else if (key == "model.heads") cfg.model.heads = static_cast<int>(need_int(key, value));
        else if (key == "model.cat_embed_width")
            cfg.model.cat_embed_width = static_cast<int>(need_int(key, value));
        else if (key == "model.ffn_mult") cfg.model.ffn_mult = static_cast<int>(need_int(key, value));
        else if (key == "model.include_bbi") cfg.model.include_bbi = need_bool(key, value);
        else if (key == "model.quantiles") {
            std::vector<double> qs;
            std::string cur;
            for (char c : value + ",") {
                if (c == ',') {
                    if (!cur.empty()) qs.push_back(need_double(key, cur));
                    cur.clear();
                } else {
                    cur += c;
                }
            }
            cfg.model.quantiles = qs;
        } else if (key == "model.w_pinball") cfg.model.w_pinball = need_double(key, value);
        else if (key == "model.w_mse") cfg.model.w_mse = need_double(key, value);
        else if (key == "model.w_sign") cfg.model.w_sign = need_double(key, value);
        else if (key == "model.w_hazard") cfg.model.w_hazard = need_double(key, value);
        else if (key == "model.learning_rate") cfg.model.learning_rate = need_double(key, value);
        else if (key == "model.batch_size") cfg.model.batch_size = static_cast<int>(need_int(key, value));
        else if (key == "model.max_epochs") cfg.model.max_epochs = static_cast<int>(need_int(key, value));
        else if (key == "model.patience") cfg.model.patience = static_cast<int>(need_int(key, value));
        else if (key == "calibration.onset_grid_max")
            cfg.calibration.onset_grid_max = static_cast<int>(need_int(key, value));
        else if (key == "calibration.tau_min") cfg.calibration.tau_min = need_double(key, value);
        else if (key == "calibration.tau_max") cfg.calibration.tau_max = need_double(key, value);
        else if (key == "calibration.tau_step") cfg.calibration.tau_step = need_double(key, value);
        else if (key == "rmssd.min_intervals")
            cfg.rmssd.min_intervals = static_cast<int>(need_int(key, value));
        else if (key == "synth.users") cfg.synth.users = static_cast<int>(need_int(key, value));
        else if (key == "synth.days") cfg.synth.days = static_cast<int>(need_int(key, value));
        else if (key == "synth.bbi_mean_ms") cfg.synth.bbi_mean_ms = need_double(key, value);
        else if (key == "synth.bbi_circadian_amp_ms")
            cfg.synth.bbi_circadian_amp_ms = need_double(key, value);
        else if (key == "synth.rsa_amp_ms") cfg.synth.rsa_amp_ms = need_double(key, value);
        else if (key == "synth.rsa_period_s") cfg.synth.rsa_period_s = need_double(key, value);
        else if (key == "synth.noise_scale") cfg.synth.noise_scale = need_double(key, value);
        else if (key == "synth.gap_rate_per_day")
            cfg.synth.gap_rate_per_day = need_double(key, value);
        else if (key == "synth.interventions_per_day")
            cfg.synth.interventions_per_day = static_cast<int>(need_int(key, value));
        else if (key == "synth.beats_per_minute")
            cfg.synth.beats_per_minute = static_cast<int>(need_int(key, value));
        else if (key.rfind("synth.effect.", 0) == 0) {
            // synth.effect.<category index> = METRIC:sign:peak:onset:decay | none
            int cat = static_cast<int>(need_int(key, key.substr(13)));
            if (cat < 0 || cat >= kCategoryCount) throw ConfigError("bad category in " + key);
            if (value == "none") {
                cfg.synth.effects[static_cast<std::size_t>(cat)].reset();
            } else {
                std::vector<std::string> parts;
                std::string cur;
                for (char c : value + ":") {
                    if (c == ':') {
                        parts.push_back(cur);
                        cur.clear();
                    } else {
                        cur += c;
                    }
                }
                if (parts.size() != 5) throw ConfigError(key + " needs metric:sign:peak:onset:decay");
                auto metric = metric_from_name(parts[0]);
                if (!metric) throw ConfigError(key + " has unknown metric " + parts[0]);
                EffectTemplate t;
                t.target = *metric;
                t.sign = static_cast<int>(need_int(key, parts[1]));
                t.peak_pct = need_double(key, parts[2]);
                t.onset_min = static_cast<int>(need_int(key, parts[3]));
                t.decay_min = need_double(key, parts[4]);
                cfg.synth.effects[static_cast<std::size_t>(cat)] = t;
            }
        } else {
            throw ConfigError("unknown config key: " + key);
        }
    }
    cfg.sync_sections();
    cfg.validate();
    return cfg;
}

}  // namespace vitalcast
