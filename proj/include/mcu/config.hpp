#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mcu/io.hpp"
#include "mcu/nlm.hpp"
#include "mcu/synth.hpp"

namespace mcu {

// ---------------------------------------------------------------------------
// Experiment configuration: flat-sectioned key=value text
// ---------------------------------------------------------------------------

struct DataConfig {
    std::string source = "synth"; // synth | file
    std::string cube_path;
    SynthConfig synth;

    bool operator==(const DataConfig&) const = default;
};

struct NetworkSection {
    std::size_t J_E = 1, J_A = 3;
    std::size_t m_E = 128, m_A = 128;
    std::size_t k_E = 5, k_A = 5;

    bool operator==(const NetworkSection&) const = default;
};

struct TrainingSection {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.85;
    std::size_t epochs = 5000;

    bool operator==(const TrainingSection&) const = default;
};

struct LossSection {
    double a1 = 0.1, a2 = 0.001, a3 = 1.0, a4 = 0.001, a5 = 0.001;

    bool operator==(const LossSection&) const = default;
};

struct RedSection {
    bool enabled = true;
    double mu_E = 0.1, mu_A = 0.1;
    std::size_t T = 5000;
    std::size_t n_inner = 1;
    double tol = 1e-4;
    std::size_t nlm_patch_radius = 1;
    std::size_t nlm_search_radius = 5;
    double nlm_h = 0.1;
    bool nlm_h_auto = true;

    bool operator==(const RedSection&) const = default;
};

struct AdmmSection {
    double lambda = 0.01;
    double rho = 1.0;
    double L = 0.0; // 0 requests the power-iteration estimate
    std::size_t iterations = 200;
    std::size_t m = 4;
    std::size_t k = 5;

    bool operator==(const AdmmSection&) const = default;
};

struct ExperimentConfig {
    DataConfig data;
    NetworkSection network;
    TrainingSection training;
    LossSection loss;
    RedSection red;
    AdmmSection admm;
    std::uint64_t seed = 0;

    bool operator==(const ExperimentConfig&) const = default;

    std::string serialize() const;
    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig parse_file(const std::string& path);
    std::uint64_t hash() const { return fnv1a64(serialize()); }
};

namespace cfgdet {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
    const char* c = v.c_str();
    char* end = nullptr;
    double x = std::strtod(c, &end);
    if (end == c || *end != '\0')
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    return x;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    const char* c = v.c_str();
    char* end = nullptr;
    unsigned long long x = std::strtoull(c, &end, 10);
    if (end == c || *end != '\0' || v.find('-') != std::string::npos)
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    return (std::uint64_t)x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

inline std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt_bool(bool v) { return v ? "true" : "false"; }

} // namespace cfgdet

inline std::string ExperimentConfig::serialize() const {
    using namespace cfgdet;
    std::ostringstream os;
    os << "[data]\n";
    os << "source = " << data.source << "\n";
    os << "cube_path = " << data.cube_path << "\n";
    os << "a = " << fmt_u64(data.synth.a) << "\n";
    os << "gamma = " << fmt_g17(data.synth.gamma) << "\n";
    os << "R = " << fmt_u64(data.synth.R) << "\n";
    os << "P = " << fmt_u64(data.synth.P) << "\n";
    os << "grid_rows = " << fmt_u64(data.synth.grid_rows) << "\n";
    os << "grid_cols = " << fmt_u64(data.synth.grid_cols) << "\n";
    os << "filter_var = " << fmt_g17(data.synth.filter_var) << "\n";
    os << "snr_db = " << fmt_g17(data.synth.snr_db) << "\n";
    os << "endmembers = "
       << (data.synth.source == EndmemberSource::library ? "library" : "procedural")
       << "\n";
    os << "library_path = " << data.synth.library_path << "\n";
    os << "\n[network]\n";
    os << "J_E = " << fmt_u64(network.J_E) << "\n";
    os << "J_A = " << fmt_u64(network.J_A) << "\n";
    os << "m_E = " << fmt_u64(network.m_E) << "\n";
    os << "m_A = " << fmt_u64(network.m_A) << "\n";
    os << "k_E = " << fmt_u64(network.k_E) << "\n";
    os << "k_A = " << fmt_u64(network.k_A) << "\n";
    os << "\n[training]\n";
    os << "lr = " << fmt_g17(training.lr) << "\n";
    os << "beta1 = " << fmt_g17(training.beta1) << "\n";
    os << "beta2 = " << fmt_g17(training.beta2) << "\n";
    os << "epochs = " << fmt_u64(training.epochs) << "\n";
    os << "\n[loss]\n";
    os << "a1 = " << fmt_g17(loss.a1) << "\n";
    os << "a2 = " << fmt_g17(loss.a2) << "\n";
    os << "a3 = " << fmt_g17(loss.a3) << "\n";
    os << "a4 = " << fmt_g17(loss.a4) << "\n";
    os << "a5 = " << fmt_g17(loss.a5) << "\n";
    os << "\n[red]\n";
    os << "enabled = " << fmt_bool(red.enabled) << "\n";
    os << "mu_E = " << fmt_g17(red.mu_E) << "\n";
    os << "mu_A = " << fmt_g17(red.mu_A) << "\n";
    os << "T = " << fmt_u64(red.T) << "\n";
    os << "n_inner = " << fmt_u64(red.n_inner) << "\n";
    os << "tol = " << fmt_g17(red.tol) << "\n";
    os << "nlm_patch_radius = " << fmt_u64(red.nlm_patch_radius) << "\n";
    os << "nlm_search_radius = " << fmt_u64(red.nlm_search_radius) << "\n";
    os << "nlm_h = " << fmt_g17(red.nlm_h) << "\n";
    os << "nlm_h_auto = " << fmt_bool(red.nlm_h_auto) << "\n";
    os << "\n[admm]\n";
    os << "lambda = " << fmt_g17(admm.lambda) << "\n";
    os << "rho = " << fmt_g17(admm.rho) << "\n";
    os << "L = " << fmt_g17(admm.L) << "\n";
    os << "iterations = " << fmt_u64(admm.iterations) << "\n";
    os << "m = " << fmt_u64(admm.m) << "\n";
    os << "k = " << fmt_u64(admm.k) << "\n";
    os << "\n[run]\n";
    os << "seed = " << fmt_u64(seed) << "\n";
    return os.str();
}

inline ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    using namespace cfgdet;
    ExperimentConfig c;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            if (section != "data" && section != "network" && section != "training" &&
                section != "loss" && section != "red" && section != "admm" &&
                section != "run")
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        std::string q = section + "." + key;

        if (q == "data.source") {
            if (val != "synth" && val != "file")
                throw ConfigError("config: data.source must be synth or file");
            c.data.source = val;
        } else if (q == "data.cube_path") c.data.cube_path = val;
        else if (q == "data.a") c.data.synth.a = to_u64(q, val);
        else if (q == "data.gamma") c.data.synth.gamma = to_double(q, val);
        else if (q == "data.R") c.data.synth.R = to_u64(q, val);
        else if (q == "data.P") c.data.synth.P = to_u64(q, val);
        else if (q == "data.grid_rows") c.data.synth.grid_rows = to_u64(q, val);
        else if (q == "data.grid_cols") c.data.synth.grid_cols = to_u64(q, val);
        else if (q == "data.filter_var") c.data.synth.filter_var = to_double(q, val);
        else if (q == "data.snr_db") c.data.synth.snr_db = to_double(q, val);
        else if (q == "data.endmembers") {
            if (val == "procedural") c.data.synth.source = EndmemberSource::procedural;
            else if (val == "library") c.data.synth.source = EndmemberSource::library;
            else throw ConfigError("config: data.endmembers must be procedural or library");
        } else if (q == "data.library_path") c.data.synth.library_path = val;
        else if (q == "network.J_E") c.network.J_E = to_u64(q, val);
        else if (q == "network.J_A") c.network.J_A = to_u64(q, val);
        else if (q == "network.m_E") c.network.m_E = to_u64(q, val);
        else if (q == "network.m_A") c.network.m_A = to_u64(q, val);
        else if (q == "network.k_E") c.network.k_E = to_u64(q, val);
        else if (q == "network.k_A") c.network.k_A = to_u64(q, val);
        else if (q == "training.lr") c.training.lr = to_double(q, val);
        else if (q == "training.beta1") c.training.beta1 = to_double(q, val);
        else if (q == "training.beta2") c.training.beta2 = to_double(q, val);
        else if (q == "training.epochs") c.training.epochs = to_u64(q, val);
        else if (q == "loss.a1") c.loss.a1 = to_double(q, val);
        else if (q == "loss.a2") c.loss.a2 = to_double(q, val);
        else if (q == "loss.a3") c.loss.a3 = to_double(q, val);
        else if (q == "loss.a4") c.loss.a4 = to_double(q, val);
        else if (q == "loss.a5") c.loss.a5 = to_double(q, val);
        else if (q == "red.enabled") c.red.enabled = to_bool(q, val);
        else if (q == "red.mu_E") c.red.mu_E = to_double(q, val);
        else if (q == "red.mu_A") c.red.mu_A = to_double(q, val);
        else if (q == "red.T") c.red.T = to_u64(q, val);
        else if (q == "red.n_inner") c.red.n_inner = to_u64(q, val);
        else if (q == "red.tol") c.red.tol = to_double(q, val);
        else if (q == "red.nlm_patch_radius") c.red.nlm_patch_radius = to_u64(q, val);
        else if (q == "red.nlm_search_radius") c.red.nlm_search_radius = to_u64(q, val);
        else if (q == "red.nlm_h") c.red.nlm_h = to_double(q, val);
        else if (q == "red.nlm_h_auto") c.red.nlm_h_auto = to_bool(q, val);
        else if (q == "admm.lambda") c.admm.lambda = to_double(q, val);
        else if (q == "admm.rho") c.admm.rho = to_double(q, val);
        else if (q == "admm.L") c.admm.L = to_double(q, val);
        else if (q == "admm.iterations") c.admm.iterations = to_u64(q, val);
        else if (q == "admm.m") c.admm.m = to_u64(q, val);
        else if (q == "admm.k") c.admm.k = to_u64(q, val);
        else if (q == "run.seed") c.seed = to_u64(q, val);
        else
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key " + q);
    }
    return c;
}

inline ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

// ---------------------------------------------------------------------------
// Derived settings
// ---------------------------------------------------------------------------

inline SynthConfig make_synth_config(const ExperimentConfig& c) {
    SynthConfig s = c.data.synth;
    s.seed = c.seed;
    return s;
}

inline NlmConfig make_nlm_config(const RedSection& r) {
    NlmConfig n;
    n.patch_radius = r.nlm_patch_radius;
    n.search_radius = r.nlm_search_radius;
    n.h = r.nlm_h;
    n.h_auto = r.nlm_h_auto;
    return n;
}

} // namespace mcu
