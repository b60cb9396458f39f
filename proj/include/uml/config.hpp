#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uml/errors.hpp"
#include "uml/losses.hpp"
#include "uml/model.hpp"
#include "uml/synthdata.hpp"

namespace uml {

// Full description of a run. Everything here is echoed verbatim into every
// output artifact, and a checkpoint carries it so evaluation can rebuild the
// exact dataset and model.
struct RunConfig {
    DataConfig data;
    ModelConfig model;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    int epochs = 50;
    int batch_size = 8;
    int gen_threads = 1;
    double w_m = 0.1, w_c = 0.5, w_s = 0.4;
    AnnealSchedule anneal{1.0, 10};
    double lambda_m2 = 1.0;
    bool md_only = false;
    bool macro_f1 = false;
    std::uint64_t master_seed = 42;
    std::string out_dir = "runs/default";
    std::vector<double> eval_sigmas{0.0, 0.03, 0.05};

    void validate() const {
        data.validate();
        model.validate();
        if (lr <= 0.0) throw config_error("run: lr must be positive");
        if (weight_decay < 0.0) throw config_error("run: negative weight decay");
        if (epochs < 0) throw config_error("run: negative epochs");
        if (batch_size <= 0) throw config_error("run: batch_size must be positive");
        if (gen_threads <= 0) throw config_error("run: gen_threads must be positive");
        if (w_m < 0.0 || w_c < 0.0 || w_s < 0.0)
            throw config_error("run: loss weights must be non-negative");
        if (lambda_m2 < 0.0) throw config_error("run: lambda_m2 must be non-negative");
        if (anneal.ramp_epochs <= 0) throw config_error("run: anneal ramp must be positive");
        if (md_only && (model.use_un || model.use_ui))
            throw config_error("run: md_only excludes use_un/use_ui");
        if (eval_sigmas.empty()) throw config_error("run: eval_sigmas empty");
        for (double s : eval_sigmas)
            if (s < 0.0) throw config_error("run: negative sigma");
    }

    // The model's init stream is derived, not configured.
    std::uint64_t weight_seed() const { return derive_seed(master_seed, 0x17); }
};

namespace kv {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <std::size_t N>
std::string fmt_ints(const std::array<int, N>& a) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) {
        if (i) s += ',';
        s += std::to_string(a[i]);
    }
    return s;
}

inline std::string fmt_doubles(const std::vector<double>& a) {
    std::string s;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (i) s += ',';
        s += fmt_double(a[i]);
    }
    return s;
}

inline double parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw config_error("trailing characters in number: " + s);
        return v;
    } catch (const std::logic_error&) {
        throw config_error("bad number: " + s);
    }
}

inline long long parse_int(const std::string& s) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw config_error("trailing characters in integer: " + s);
        return v;
    } catch (const std::logic_error&) {
        throw config_error("bad integer: " + s);
    }
}

inline std::uint64_t parse_u64(const std::string& s) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw config_error("trailing characters in integer: " + s);
        return v;
    } catch (const std::logic_error&) {
        throw config_error("bad integer: " + s);
    }
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw config_error("bad boolean: " + s);
}

template <std::size_t N>
std::array<int, N> parse_ints(const std::string& s) {
    std::array<int, N> out{};
    std::stringstream ss(s);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= N) throw config_error("too many entries in list: " + s);
        out[i++] = static_cast<int>(parse_int(item));
    }
    if (i != N) throw config_error("expected " + std::to_string(N) + " entries: " + s);
    return out;
}

inline std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
    return out;
}

}  // namespace kv

// Flat `key = value` view in a fixed order; this is both the config-file
// format and the echo embedded in artifacts.
inline std::vector<std::pair<std::string, std::string>> to_kv(const RunConfig& c) {
    using namespace kv;
    std::vector<std::pair<std::string, std::string>> out;
    auto put = [&](const char* k, std::string v) { out.emplace_back(k, std::move(v)); };
    put("data.height", std::to_string(c.data.height));
    put("data.width", std::to_string(c.data.width));
    put("data.n_train", std::to_string(c.data.n_train));
    put("data.n_val", std::to_string(c.data.n_val));
    put("data.n_test", std::to_string(c.data.n_test));
    put("data.ratio_threshold", fmt_double(c.data.ratio_threshold));
    put("data.ratio_margin", fmt_double(c.data.ratio_margin));
    put("data.radius_min", fmt_double(c.data.radius_min));
    put("data.radius_max", fmt_double(c.data.radius_max));
    put("data.rho_min", fmt_double(c.data.rho_min));
    put("data.rho_max", fmt_double(c.data.rho_max));
    put("data.bg_intensity", fmt_double(c.data.bg_intensity));
    put("data.disc_intensity", fmt_double(c.data.disc_intensity));
    put("data.cup_intensity", fmt_double(c.data.cup_intensity));
    put("data.texture_amp", fmt_double(c.data.texture_amp));
    put("data.noise_amp", fmt_double(c.data.noise_amp));
    put("data.falloff", fmt_double(c.data.falloff));
    put("data.balance_cap", fmt_double(c.data.balance_cap));
    put("data.master_seed", std::to_string(c.data.master_seed));
    put("model.num_classes", std::to_string(c.model.num_classes));
    put("model.num_seg_classes", std::to_string(c.model.num_seg_classes));
    put("model.enc_widths", fmt_ints(c.model.enc_widths));
    put("model.ev_widths", fmt_ints(c.model.ev_widths));
    put("model.dec_widths", fmt_ints(c.model.dec_widths));
    put("model.mr_channels", std::to_string(c.model.mr_channels));
    put("model.use_un", fmt_bool(c.model.use_un));
    put("model.use_ui", fmt_bool(c.model.use_ui));
    put("train.lr", fmt_double(c.lr));
    put("train.weight_decay", fmt_double(c.weight_decay));
    put("train.epochs", std::to_string(c.epochs));
    put("train.batch_size", std::to_string(c.batch_size));
    put("train.gen_threads", std::to_string(c.gen_threads));
    put("loss.w_m", fmt_double(c.w_m));
    put("loss.w_c", fmt_double(c.w_c));
    put("loss.w_s", fmt_double(c.w_s));
    put("loss.anneal_max", fmt_double(c.anneal.max_value));
    put("loss.anneal_ramp_epochs", std::to_string(c.anneal.ramp_epochs));
    put("loss.lambda_m2", fmt_double(c.lambda_m2));
    put("run.md_only", fmt_bool(c.md_only));
    put("run.macro_f1", fmt_bool(c.macro_f1));
    put("run.master_seed", std::to_string(c.master_seed));
    put("run.out_dir", c.out_dir);
    put("run.eval_sigmas", fmt_doubles(c.eval_sigmas));
    return out;
}

inline void apply_kv(RunConfig& c, const std::string& key, const std::string& val) {
    using namespace kv;
    if (key == "data.height") c.data.height = static_cast<int>(parse_int(val));
    else if (key == "data.width") c.data.width = static_cast<int>(parse_int(val));
    else if (key == "data.n_train") c.data.n_train = static_cast<int>(parse_int(val));
    else if (key == "data.n_val") c.data.n_val = static_cast<int>(parse_int(val));
    else if (key == "data.n_test") c.data.n_test = static_cast<int>(parse_int(val));
    else if (key == "data.ratio_threshold") c.data.ratio_threshold = parse_double(val);
    else if (key == "data.ratio_margin") c.data.ratio_margin = parse_double(val);
    else if (key == "data.radius_min") c.data.radius_min = parse_double(val);
    else if (key == "data.radius_max") c.data.radius_max = parse_double(val);
    else if (key == "data.rho_min") c.data.rho_min = parse_double(val);
    else if (key == "data.rho_max") c.data.rho_max = parse_double(val);
    else if (key == "data.bg_intensity") c.data.bg_intensity = parse_double(val);
    else if (key == "data.disc_intensity") c.data.disc_intensity = parse_double(val);
    else if (key == "data.cup_intensity") c.data.cup_intensity = parse_double(val);
    else if (key == "data.texture_amp") c.data.texture_amp = parse_double(val);
    else if (key == "data.noise_amp") c.data.noise_amp = parse_double(val);
    else if (key == "data.falloff") c.data.falloff = parse_double(val);
    else if (key == "data.balance_cap") c.data.balance_cap = parse_double(val);
    else if (key == "data.master_seed") c.data.master_seed = parse_u64(val);
    else if (key == "model.num_classes") c.model.num_classes = static_cast<int>(parse_int(val));
    else if (key == "model.num_seg_classes")
        c.model.num_seg_classes = static_cast<int>(parse_int(val));
    else if (key == "model.enc_widths") c.model.enc_widths = parse_ints<4>(val);
    else if (key == "model.ev_widths") c.model.ev_widths = parse_ints<3>(val);
    else if (key == "model.dec_widths") c.model.dec_widths = parse_ints<3>(val);
    else if (key == "model.mr_channels") c.model.mr_channels = static_cast<int>(parse_int(val));
    else if (key == "model.use_un") c.model.use_un = parse_bool(val);
    else if (key == "model.use_ui") c.model.use_ui = parse_bool(val);
    else if (key == "train.lr") c.lr = parse_double(val);
    else if (key == "train.weight_decay") c.weight_decay = parse_double(val);
    else if (key == "train.epochs") c.epochs = static_cast<int>(parse_int(val));
    else if (key == "train.batch_size") c.batch_size = static_cast<int>(parse_int(val));
    else if (key == "train.gen_threads") c.gen_threads = static_cast<int>(parse_int(val));
    else if (key == "loss.w_m") c.w_m = parse_double(val);
    else if (key == "loss.w_c") c.w_c = parse_double(val);
    else if (key == "loss.w_s") c.w_s = parse_double(val);
    else if (key == "loss.anneal_max") c.anneal.max_value = parse_double(val);
    else if (key == "loss.anneal_ramp_epochs")
        c.anneal.ramp_epochs = static_cast<int>(parse_int(val));
    else if (key == "loss.lambda_m2") c.lambda_m2 = parse_double(val);
    else if (key == "run.md_only") c.md_only = parse_bool(val);
    else if (key == "run.macro_f1") c.macro_f1 = parse_bool(val);
    else if (key == "run.master_seed") c.master_seed = parse_u64(val);
    else if (key == "run.out_dir") c.out_dir = val;
    else if (key == "run.eval_sigmas") c.eval_sigmas = parse_doubles(val);
    else throw config_error("unknown config key: " + key);
}

inline std::string serialize_config(const RunConfig& c) {
    std::string out;
    for (const auto& [k, v] : to_kv(c)) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

inline void trim(std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    s = (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
}

// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
inline RunConfig parse_config_text(const std::string& text, RunConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": missing '='");
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        trim(key);
        trim(val);
        apply_kv(base, key, val);
    }
    return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), std::move(base));
}

}  // namespace uml
