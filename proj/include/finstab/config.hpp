#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "sweep.hpp"

namespace finstab {

/// Raised for malformed or out-of-range configuration input.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Options of the time-domain `simulate` command.
struct SimulateConfig {
    std::size_t horizon = 200;
    std::size_t paths = 1000;
    bool static_factor = true;
    std::size_t trace_assets = 10;
    bool dump_network = true;
    double target_spread = 0.0;
    bool recapitalize = true;
};

struct RunConfig {
    SweepConfig sweep;
    SimulateConfig simulate;
    std::string format = "csv";
    bool svg = true;
};

/// Flat `key = value` lines with dotted keys; `#` starts a comment.
class KeyValueFile {
public:
    static KeyValueFile parse(std::istream& is) {
        KeyValueFile f;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
            }
            auto key = trim(line.substr(0, eq));
            auto value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            if (f.values_.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
            f.values_[key] = value;
        }
        return f;
    }

    static KeyValueFile load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        return parse(in);
    }

    const std::map<std::string, std::string>& values() const { return values_; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": not a number: " + v);
    return out;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError(key + ": not a non-negative integer: " + v);
    }
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": not a boolean: " + v);
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
                   item.end());
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace detail

inline std::vector<Method> parse_methods(const std::string& v) {
    std::vector<Method> out;
    for (const auto& name : detail::split_list(v)) {
        try {
            const auto m = parse_method(name);
            if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(ex.what());
        }
    }
    if (out.empty()) throw ConfigError("run.methods: empty method list");
    return out;
}

/// Builds a run configuration from key/value pairs. Unknown keys and
/// invalid values are configuration errors.
inline RunConfig build_config(const KeyValueFile& file) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_uint;
    RunConfig rc;
    auto& c = rc.sweep;
    double het_phi = 0.9, het_pb = 7.0 / 27.0;
    std::vector<std::string> setting_names{"homogeneous", "heterogeneous"};

    for (const auto& [k, v] : file.values()) {
        if (k == "model.N") c.base.N = to_uint(k, v);
        else if (k == "model.M") c.base.M = to_uint(k, v);
        else if (k == "model.q") c.base.q = to_double(k, v);
        else if (k == "model.zeta") c.base.zeta = to_double(k, v);
        else if (k == "model.sigma_s2") c.base.sigma_s2 = to_double(k, v);
        else if (k == "model.sigma_d2") c.base.sigma_d2 = to_double(k, v);
        else if (k == "model.gamma") c.base.gamma = to_double(k, v);
        else if (k == "model.sigma_f2") c.base.sigma_f2 = to_double(k, v);
        else if (k == "model.sigma_nu2") c.base.sigma_nu2 = to_double(k, v);
        else if (k == "het.phi") het_phi = to_double(k, v);
        else if (k == "het.p_B") het_pb = to_double(k, v);
        else if (k == "het.settings") setting_names = detail::split_list(v);
        else if (k == "grid.phi.min") c.phi.min = to_double(k, v);
        else if (k == "grid.phi.max") c.phi.max = to_double(k, v);
        else if (k == "grid.phi.points") c.phi.points = to_uint(k, v);
        else if (k == "grid.p_B.min") c.p_B.min = to_double(k, v);
        else if (k == "grid.p_B.max") c.p_B.max = to_double(k, v);
        else if (k == "grid.p_B.points") c.p_B.points = to_uint(k, v);
        else if (k == "grid.p_B.centered") c.p_B.centered = to_bool(k, v);
        else if (k == "grid.q.min") c.q.min = to_double(k, v);
        else if (k == "grid.q.max") c.q.max = to_double(k, v);
        else if (k == "grid.q.points") c.q.points = to_uint(k, v);
        else if (k == "run.methods") c.methods = parse_methods(v);
        else if (k == "run.samples") c.samples = to_uint(k, v);
        else if (k == "run.seed") c.seed = to_uint(k, v);
        else if (k == "run.workers") c.workers = to_uint(k, v);
        else if (k == "run.out_dir") c.out_dir = v;
        else if (k == "run.format") rc.format = v;
        else if (k == "run.svg") rc.svg = to_bool(k, v);
        else if (k == "solver.kind") {
            if (v == "lanczos") c.solver.solver = EigenSolver::lanczos;
            else if (v == "power") c.solver.solver = EigenSolver::power;
            else throw ConfigError(k + ": expected lanczos or power");
        }
        else if (k == "solver.tol") c.solver.tol = to_double(k, v);
        else if (k == "solver.max_iter") c.solver.max_iter = to_uint(k, v);
        else if (k == "solver.krylov_dim") c.solver.krylov_dim = to_uint(k, v);
        else if (k == "replica.pop_size") c.replica.pop_size = to_uint(k, v);
        else if (k == "replica.equilibration_sweeps") c.replica.equilibration_sweeps = to_uint(k, v);
        else if (k == "replica.measurement_sweeps") c.replica.measurement_sweeps = to_uint(k, v);
        else if (k == "replica.bisection_tol") c.replica.bisection_tol = to_double(k, v);
        else if (k == "replica.max_probes") c.replica.max_probes = to_uint(k, v);
        else if (k == "replica.max_redraw_fraction") c.replica.max_redraw_fraction = to_double(k, v);
        else if (k == "replica.bracket_N") c.replica.bracket_instance_N = to_uint(k, v);
        else if (k == "corsi.form") {
            if (v == "asymptotic") c.corsi_form = CorsiForm::asymptotic;
            else if (v == "finite") c.corsi_form = CorsiForm::finite;
            else throw ConfigError(k + ": expected asymptotic or finite");
        }
        else if (k == "gap.scales") {
            c.scales.clear();
            for (const auto& s : detail::split_list(v)) c.scales.push_back(to_uint(k, s));
        }
        else if (k == "simulate.horizon") rc.simulate.horizon = to_uint(k, v);
        else if (k == "simulate.paths") rc.simulate.paths = to_uint(k, v);
        else if (k == "simulate.static_factor") rc.simulate.static_factor = to_bool(k, v);
        else if (k == "simulate.trace_assets") rc.simulate.trace_assets = to_uint(k, v);
        else if (k == "simulate.dump_network") rc.simulate.dump_network = to_bool(k, v);
        else if (k == "simulate.target_spread") rc.simulate.target_spread = to_double(k, v);
        else if (k == "simulate.recapitalize") rc.simulate.recapitalize = to_bool(k, v);
        else throw ConfigError("unknown config key: " + k);
    }

    if (rc.format != "csv" && rc.format != "json") throw ConfigError("run.format: expected csv or json");
    if (rc.simulate.paths < 2) throw ConfigError("simulate.paths must be >= 2");
    try {
        c.settings.clear();
        for (const auto& name : setting_names) {
            if (name == "homogeneous") c.settings.push_back({name, homogeneous()});
            else if (name == "heterogeneous") c.settings.push_back({name, solve_heterogeneity(het_phi, het_pb)});
            else throw ConfigError("het.settings: unknown setting " + name);
        }
        c.validate();
    } catch (const ParamError& ex) {
        throw ConfigError(ex.what());
    }
    return rc;
}

}  // namespace finstab
