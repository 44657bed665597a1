#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metatrack {

// Every tunable in one place. Files and --set overrides use `key = value`
// lines; unknown keys and malformed values are hard errors so a typo cannot
// silently fall back to a default.
struct Config {
    // patch and feature geometry
    double gamma = 5.0;      // ROI side = gamma * sqrt(w*h)
    int64_t patch_size = 64; // square patch side fed to the feature stack
    double rho = 1.5;        // filter enlargement over the object extent
    double alpha = 20.0;     // label sharpness
    int64_t cell = 4;        // feature stride in patch pixels
    int64_t feat_channels = 16;
    int64_t reduced_channels = 8;
    int64_t base_size = 11;
    int64_t hidden = 20;
    uint64_t feature_seed = 2024;

    // offline meta-training
    int64_t tau = 5;              // frames between update events
    int64_t updates = 6;          // recurrent events unrolled per clip
    int64_t batch_clips = 16;     // clips averaged per outer iteration
    int64_t iterations = 2000;    // outer iterations
    int64_t iters_per_epoch = 100;
    int64_t checkpoint_every = 500;
    double kappa_cf = 1.6;        // rescale half-range, response branch
    double kappa_reg = 1.3;       // rescale half-range, regression branch
    bool rescale_filters = true;
    bool second_order = true;
    double lr_model = 1e-6;
    double lr_optimizer = 1e-3;
    double lr_decay = 0.5;
    int64_t decay_epochs = 5;
    double grad_clip = 0.0;       // global-norm cap on outer gradients; 0 = off
    double jitter_center = 0.1;   // crop center noise, fraction of object size
    double jitter_scale = 0.05;   // crop scale noise, log-range
    double lambda0_init = -4.6;   // raw init; applied rate is sigmoid of this
    double head_bias = -4.0;      // projection bias init of the rate head

    // online tracking
    double penalty_k = 0.055;
    double window_weight = 0.3;
    double size_beta = 0.3;
    bool multi_scale = false;
    double scale_delta = 0.02;    // candidate scales 1-delta, 1, 1+delta
    double scale_penalty = 0.975;
    int64_t update_steps = 2;

    // synthetic sequences
    int64_t frame_size = 128;
    int64_t clip_length = 31;
    std::string object_kind = "blob";  // rect | ellipse | blob
    double motion_sigma = 2.0;
    double scale_sigma = 0.02;
    double aspect_sigma = 0.01;
    double photometric_sigma = 0.01;
    int64_t distractors = 2;
    double min_object = 16.0;
    double max_object = 48.0;

    // optimizer comparison
    std::string compare_budgets = "1,2,4,8,16";  // update steps per refit to sweep
    double sgd_rate = 1e-3;                      // fixed rate of the baseline arm
    int64_t meta_clips = 0;  // held-out clips for objective rows; 0 skips them

    // run plumbing
    uint64_t seed = 1;
    int64_t workers = 0;  // 0 = one per hardware thread
    int64_t sequences = 20;
    std::string run_mode;  // recorded by the CLI for manifest reruns
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint_path;
    std::string sequence_dir;
    std::string pred_path;

    bool operator==(const Config&) const = default;
};

namespace detail {

struct IntKey { const char* name; int64_t Config::*ptr; };
struct RealKey { const char* name; double Config::*ptr; };
struct FlagKey { const char* name; bool Config::*ptr; };
struct U64Key { const char* name; uint64_t Config::*ptr; };
struct TextKey { const char* name; std::string Config::*ptr; };

inline const std::vector<IntKey>& int_keys() {
    static const std::vector<IntKey> keys = {
        {"patch_size", &Config::patch_size},
        {"cell", &Config::cell},
        {"feat_channels", &Config::feat_channels},
        {"reduced_channels", &Config::reduced_channels},
        {"base_size", &Config::base_size},
        {"hidden", &Config::hidden},
        {"tau", &Config::tau},
        {"updates", &Config::updates},
        {"batch_clips", &Config::batch_clips},
        {"iterations", &Config::iterations},
        {"iters_per_epoch", &Config::iters_per_epoch},
        {"checkpoint_every", &Config::checkpoint_every},
        {"decay_epochs", &Config::decay_epochs},
        {"update_steps", &Config::update_steps},
        {"meta_clips", &Config::meta_clips},
        {"frame_size", &Config::frame_size},
        {"clip_length", &Config::clip_length},
        {"distractors", &Config::distractors},
        {"workers", &Config::workers},
        {"sequences", &Config::sequences},
    };
    return keys;
}

inline const std::vector<RealKey>& real_keys() {
    static const std::vector<RealKey> keys = {
        {"gamma", &Config::gamma},
        {"rho", &Config::rho},
        {"alpha", &Config::alpha},
        {"kappa_cf", &Config::kappa_cf},
        {"kappa_reg", &Config::kappa_reg},
        {"lr_model", &Config::lr_model},
        {"lr_optimizer", &Config::lr_optimizer},
        {"lr_decay", &Config::lr_decay},
        {"grad_clip", &Config::grad_clip},
        {"jitter_center", &Config::jitter_center},
        {"jitter_scale", &Config::jitter_scale},
        {"lambda0_init", &Config::lambda0_init},
        {"head_bias", &Config::head_bias},
        {"penalty_k", &Config::penalty_k},
        {"window_weight", &Config::window_weight},
        {"size_beta", &Config::size_beta},
        {"scale_delta", &Config::scale_delta},
        {"scale_penalty", &Config::scale_penalty},
        {"sgd_rate", &Config::sgd_rate},
        {"motion_sigma", &Config::motion_sigma},
        {"scale_sigma", &Config::scale_sigma},
        {"aspect_sigma", &Config::aspect_sigma},
        {"photometric_sigma", &Config::photometric_sigma},
        {"min_object", &Config::min_object},
        {"max_object", &Config::max_object},
    };
    return keys;
}

inline const std::vector<FlagKey>& flag_keys() {
    static const std::vector<FlagKey> keys = {
        {"rescale_filters", &Config::rescale_filters},
        {"second_order", &Config::second_order},
        {"multi_scale", &Config::multi_scale},
    };
    return keys;
}

inline const std::vector<U64Key>& u64_keys() {
    static const std::vector<U64Key> keys = {
        {"feature_seed", &Config::feature_seed},
        {"seed", &Config::seed},
    };
    return keys;
}

inline const std::vector<TextKey>& text_keys() {
    static const std::vector<TextKey> keys = {
        {"object_kind", &Config::object_kind},
        {"compare_budgets", &Config::compare_budgets},
        {"run_mode", &Config::run_mode},
        {"data_dir", &Config::data_dir},
        {"out_dir", &Config::out_dir},
        {"checkpoint_path", &Config::checkpoint_path},
        {"sequence_dir", &Config::sequence_dir},
        {"pred_path", &Config::pred_path},
    };
    return keys;
}

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline int64_t parse_int(const std::string& v, const std::string& key) {
    size_t used = 0;
    int64_t out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' needs an integer, got '" + v + "'");
    }
    if (used != v.size())
        throw std::invalid_argument("config: key '" + key + "' needs an integer, got '" + v + "'");
    return out;
}

inline uint64_t parse_u64(const std::string& v, const std::string& key) {
    size_t used = 0;
    uint64_t out = 0;
    try {
        out = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' needs an unsigned integer, got '" +
                                    v + "'");
    }
    if (used != v.size() || v.front() == '-')
        throw std::invalid_argument("config: key '" + key + "' needs an unsigned integer, got '" +
                                    v + "'");
    return out;
}

inline double parse_real(const std::string& v, const std::string& key) {
    size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' needs a number, got '" + v + "'");
    }
    if (used != v.size())
        throw std::invalid_argument("config: key '" + key + "' needs a number, got '" + v + "'");
    return out;
}

inline bool parse_flag(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: key '" + key + "' needs true/false, got '" + v + "'");
}

} // namespace detail

// Comma-separated positive integers, e.g. "1,2,4,8,16".
inline std::vector<int64_t> parse_budget_list(const std::string& text) {
    std::vector<int64_t> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const int64_t v = detail::parse_int(detail::trim(item), "compare_budgets");
        if (v < 1)
            throw std::invalid_argument("config: compare_budgets entries must be positive");
        out.push_back(v);
    }
    if (out.empty())
        throw std::invalid_argument("config: compare_budgets must list at least one step count");
    return out;
}

// Applies one `key = value` (or `key=value`) assignment.
inline void apply_assignment(Config& cfg, const std::string& line) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("config: expected key = value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
        throw std::invalid_argument("config: empty key in '" + line + "'");
    for (const auto& k : detail::int_keys())
        if (key == k.name) { cfg.*(k.ptr) = detail::parse_int(value, key); return; }
    for (const auto& k : detail::real_keys())
        if (key == k.name) { cfg.*(k.ptr) = detail::parse_real(value, key); return; }
    for (const auto& k : detail::flag_keys())
        if (key == k.name) { cfg.*(k.ptr) = detail::parse_flag(value, key); return; }
    for (const auto& k : detail::u64_keys())
        if (key == k.name) { cfg.*(k.ptr) = detail::parse_u64(value, key); return; }
    for (const auto& k : detail::text_keys())
        if (key == k.name) { cfg.*(k.ptr) = value; return; }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline Config parse_config_text(const std::string& text, Config base = Config{}) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        apply_assignment(base, line);
    }
    return base;
}

inline Config load_config(const std::string& path, Config base = Config{}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), std::move(base));
}

// Full resolved state, one key per line, parseable by load_config.
inline std::string serialize_config(const Config& cfg) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (const auto& k : detail::int_keys()) out << k.name << " = " << cfg.*(k.ptr) << "\n";
    for (const auto& k : detail::u64_keys()) out << k.name << " = " << cfg.*(k.ptr) << "\n";
    for (const auto& k : detail::real_keys()) out << k.name << " = " << cfg.*(k.ptr) << "\n";
    for (const auto& k : detail::flag_keys())
        out << k.name << " = " << (cfg.*(k.ptr) ? "true" : "false") << "\n";
    for (const auto& k : detail::text_keys()) out << k.name << " = " << cfg.*(k.ptr) << "\n";
    return out.str();
}

inline void validate(const Config& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (!(cfg.gamma > 0)) fail("gamma must be positive");
    if (cfg.patch_size < 8) fail("patch_size must be at least 8");
    if (cfg.cell != 4) fail("cell must be 4: the feature stack downsamples by 4");
    if (cfg.patch_size % cfg.cell != 0) fail("patch_size must be divisible by cell");
    if (!(cfg.rho >= 1.0)) fail("rho must be at least 1");
    if (!(cfg.alpha > 0)) fail("alpha must be positive");
    if (cfg.feat_channels < 1 || cfg.reduced_channels < 1) fail("channel counts must be positive");
    if (cfg.base_size < 1 || cfg.base_size % 2 == 0) fail("base_size must be a positive odd number");
    if (cfg.hidden < 1) fail("hidden must be positive");
    if (cfg.tau < 1) fail("tau must be positive");
    if (cfg.updates < 1) fail("updates must be positive");
    if (cfg.batch_clips < 1) fail("batch_clips must be positive");
    if (cfg.iterations < 0) fail("iterations must be non-negative");
    if (cfg.iters_per_epoch < 1) fail("iters_per_epoch must be positive");
    if (cfg.checkpoint_every < 1) fail("checkpoint_every must be positive");
    if (cfg.decay_epochs < 1) fail("decay_epochs must be positive");
    if (cfg.kappa_cf < 0 || cfg.kappa_reg < 0) fail("rescale half-ranges must be non-negative");
    if (!(cfg.lr_model > 0) || !(cfg.lr_optimizer > 0)) fail("learning rates must be positive");
    if (!(cfg.lr_decay > 0) || cfg.lr_decay > 1) fail("lr_decay must be in (0,1]");
    if (!(cfg.grad_clip >= 0)) fail("grad_clip must be non-negative (0 disables)");
    if (cfg.jitter_center < 0 || cfg.jitter_scale < 0) fail("jitter amounts must be non-negative");
    if (cfg.penalty_k < 0) fail("penalty_k must be non-negative");
    if (cfg.window_weight < 0 || cfg.window_weight > 1) fail("window_weight must be in [0,1]");
    if (cfg.size_beta < 0 || cfg.size_beta > 1) fail("size_beta must be in [0,1]");
    if (cfg.scale_delta < 0 || cfg.scale_delta >= 1) fail("scale_delta must be in [0,1)");
    if (!(cfg.scale_penalty > 0) || cfg.scale_penalty > 1) fail("scale_penalty must be in (0,1]");
    if (cfg.update_steps < 1) fail("update_steps must be positive");
    parse_budget_list(cfg.compare_budgets);
    if (!(cfg.sgd_rate > 0)) fail("sgd_rate must be positive");
    if (cfg.meta_clips < 0) fail("meta_clips must be non-negative");
    if (cfg.frame_size < 32) fail("frame_size must be at least 32");
    if (cfg.clip_length < cfg.tau * cfg.updates)
        fail("clip_length must cover tau * updates frames");
    if (cfg.object_kind != "rect" && cfg.object_kind != "ellipse" && cfg.object_kind != "blob")
        fail("object_kind must be rect, ellipse or blob");
    if (!(cfg.motion_sigma >= 0) || !(cfg.scale_sigma >= 0) || !(cfg.aspect_sigma >= 0) ||
        !(cfg.photometric_sigma >= 0))
        fail("drift magnitudes must be non-negative");
    if (cfg.distractors < 0) fail("distractors must be non-negative");
    if (!(cfg.min_object >= 4) || !(cfg.max_object >= cfg.min_object))
        fail("object size range must satisfy 4 <= min_object <= max_object");
    if (cfg.max_object * 2 > cfg.frame_size) fail("max_object must fit twice into frame_size");
    if (cfg.workers < 0) fail("workers must be non-negative");
    if (cfg.sequences < 1) fail("sequences must be positive");
    if (!cfg.run_mode.empty() && cfg.run_mode != "gen-data" && cfg.run_mode != "meta-train" &&
        cfg.run_mode != "track" && cfg.run_mode != "eval" && cfg.run_mode != "compare")
        fail("run_mode must be one of gen-data, meta-train, track, eval, compare");
}

// The manifest is a complete, re-parseable record of one run: the resolved
// config plus the command line that produced it (as a comment).
inline void write_manifest(const std::string& path, const Config& cfg,
                           const std::vector<std::string>& argv) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest: cannot open " + path + " for writing");
    out << "# command:";
    for (const auto& a : argv) out << " " << a;
    out << "\n" << serialize_config(cfg);
    if (!out) throw std::runtime_error("manifest: write failed for " + path);
}

} // namespace metatrack
