// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: an INI-style text file of `key = value` lines grouped
// under [section] headers, with `#` comments. Overrides given on the command
// line as section.key=value are applied after the file.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "character_basis.hpp"
#include "lattice.hpp"

namespace flipdiff {

struct ConfigError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct RunConfig
{
    std::string output = "out";

    // [model]
    int dim = 1;
    int side = 512;
    std::string kernel = "nn";
    double lambda = 1.0;
    double rate = 1.0;

    // [ensemble]
    std::size_t n_traj = 200;
    std::uint64_t seed = 1;
    std::vector<double> times;  // empty until resolved
    unsigned threads = 0;       // 0: hardware concurrency
    double fit_lo = 20.0, fit_hi = 50.0;
    std::vector<int> cf_modes{2, 4, 6, 8};  // dual-grid indices 2 pi m / side
    double eps_step = 1e-12;

    // [spectral]
    Truncation trunc;
    int k_points = 9;
    double k_max = 0.2;
    double fd_step = 1e-3;
    double residual_tol = 1e-10;
    double solver_tol = 1e-12;
    bool gap_scan = true;
    bool weak_coupling = true;

    // [oracle]
    int oracle_side = 5;
    double oracle_t = 2.0;
    std::size_t oracle_n_traj = 20000;
    int fiber_side = 4;

    HoppingKernel hopping() const;
    double t_max() const { return times.back(); }
    unsigned thread_count() const
    {
        return threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    }
    std::string to_ini() const;
};

namespace detail {

inline std::string trim(std::string s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string const& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    return out;
}

inline std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // shortest representation that round-trips
    for (int p = 1; p <= 17; ++p) {
        char b2[32];
        std::snprintf(b2, sizeof b2, "%.*g", p, v);
        if (std::strtod(b2, nullptr) == v) return b2;
    }
    return buf;
}

template <class T>
T parse_number(std::string const& s)
{
    T v{};
    auto const* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError("'" + s + "' is not a valid number");
    return v;
}

inline bool parse_bool(std::string const& s)
{
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    throw ConfigError("'" + s + "' is not a boolean (true/false)");
}

/// Comma list of numbers or lo:hi:n linear ranges.
inline std::vector<double> parse_times(std::string const& s)
{
    std::vector<double> out;
    for (auto const& item : split(s, ',')) {
        auto parts = split(item, ':');
        if (parts.size() == 1) {
            out.push_back(parse_number<double>(parts[0]));
        } else if (parts.size() == 3) {
            const double lo = parse_number<double>(parts[0]), hi = parse_number<double>(parts[1]);
            const int n = parse_number<int>(parts[2]);
            if (n < 2) throw ConfigError("range '" + item + "' needs at least 2 points");
            for (int i = 0; i < n; ++i) out.push_back(lo + (hi - lo) * i / (n - 1));
        } else {
            throw ConfigError("'" + item + "' is neither a time nor a lo:hi:n range");
        }
    }
    for (std::size_t i = 1; i < out.size(); ++i)
        if (!(out[i] > out[i - 1])) throw ConfigError("checkpoint times must be strictly increasing");
    if (!out.empty() && out[0] < 0.0) throw ConfigError("checkpoint times must be >= 0");
    return out;
}

} // namespace detail

/// "nn", or entries "dx[,dy[,dz]]:re[:im]" separated by ';'.
inline HoppingKernel parse_kernel(std::string const& s, int dim)
{
    check_dim(dim);
    if (detail::trim(s) == "nn") return HoppingKernel::nearest_neighbor(dim);
    HoppingKernel h;
    h.dim = dim;
    for (auto const& entry : detail::split(s, ';')) {
        if (entry.empty()) continue;
        auto parts = detail::split(entry, ':');
        if (parts.size() < 2 || parts.size() > 3)
            throw ConfigError("kernel entry '" + entry + "' must read disp:re or disp:re:im");
        auto comps = detail::split(parts[0], ',');
        if (int(comps.size()) != dim)
            throw ConfigError("kernel displacement '" + parts[0] + "' needs " + std::to_string(dim) + " components");
        HoppingTerm t;
        for (int i = 0; i < dim; ++i) t.disp[i] = detail::parse_number<int>(comps[std::size_t(i)]);
        const double re = detail::parse_number<double>(parts[1]);
        const double im = parts.size() == 3 ? detail::parse_number<double>(parts[2]) : 0.0;
        t.amp = {re, im};
        h.terms.push_back(t);
    }
    if (h.terms.empty()) throw ConfigError("kernel has no entries");
    return h;
}

inline HoppingKernel RunConfig::hopping() const { return parse_kernel(kernel, dim); }

inline std::string RunConfig::to_ini() const
{
    using detail::fmt_double;
    std::ostringstream os;
    auto list = [](auto const& v, auto f) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + f(v[i]);
        return s;
    };
    os << "[run]\noutput = " << output << "\n\n";
    os << "[model]\ndim = " << dim << "\nside = " << side << "\nkernel = " << kernel
       << "\nlambda = " << fmt_double(lambda) << "\nrate = " << fmt_double(rate) << "\n\n";
    os << "[ensemble]\nn_traj = " << n_traj << "\nseed = " << seed
       << "\ntimes = " << list(times, fmt_double) << "\nthreads = " << threads
       << "\nfit_lo = " << fmt_double(fit_lo) << "\nfit_hi = " << fmt_double(fit_hi)
       << "\ncf_modes = " << list(cf_modes, [](int m) { return std::to_string(m); })
       << "\neps_step = " << fmt_double(eps_step) << "\n\n";
    os << "[spectral]\npos_radius = " << trunc.pos_radius << "\nset_size = " << trunc.set_size
       << "\nset_radius = " << trunc.set_radius << "\nk_points = " << k_points << "\nk_max = " << fmt_double(k_max)
       << "\nfd_step = " << fmt_double(fd_step) << "\nresidual_tol = " << fmt_double(residual_tol)
       << "\nsolver_tol = " << fmt_double(solver_tol) << "\ngap_scan = " << (gap_scan ? "true" : "false")
       << "\nweak_coupling = " << (weak_coupling ? "true" : "false") << "\n\n";
    os << "[oracle]\nside = " << oracle_side << "\nt = " << fmt_double(oracle_t) << "\nn_traj = " << oracle_n_traj
       << "\nfiber_side = " << fiber_side << "\n";
    return os.str();
}

//---------------------------------------------------------------------------//
/// A raw `section.key = value` assignment and where it came from.
struct ConfigEntry
{
    std::string section, key, value;
    std::string origin;  // "file:line" or "--set"
};

inline std::vector<ConfigEntry> read_ini(std::istream& is, std::string const& name)
{
    std::vector<ConfigEntry> out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = name + ":" + std::to_string(lineno);
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError(where + ": empty section name");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        if (section.empty()) throw ConfigError(where + ": key outside of any [section]");
        ConfigEntry e{section, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), where};
        if (e.key.empty()) throw ConfigError(where + ": empty key");
        out.push_back(std::move(e));
    }
    return out;
}

/// Parses "section.key=value".
inline ConfigEntry parse_override(std::string const& s)
{
    auto eq = s.find('=');
    auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("--set " + s + ": expected section.key=value");
    return {detail::trim(s.substr(0, dot)), detail::trim(s.substr(dot + 1, eq - dot - 1)),
            detail::trim(s.substr(eq + 1)), "--set " + s};
}

inline void apply_entry(RunConfig& c, ConfigEntry const& e)
{
    using detail::parse_bool;
    using detail::parse_number;
    auto positive = [](double v, char const* what) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be positive");
        return v;
    };
    auto at_least = [](long long v, long long lo, char const* what) {
        if (v < lo) throw ConfigError(std::string(what) + " must be >= " + std::to_string(lo));
        return v;
    };
    try {
        const auto& k = e.key;
        const auto& v = e.value;
        if (e.section == "run") {
            if (k == "output") c.output = v;
            else throw ConfigError("unknown key");
        } else if (e.section == "model") {
            if (k == "dim") {
                c.dim = parse_number<int>(v);
                check_dim(c.dim);
            } else if (k == "side") c.side = int(at_least(parse_number<int>(v), 1, "side"));
            else if (k == "kernel") c.kernel = v;
            else if (k == "lambda") {
                c.lambda = parse_number<double>(v);
                if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw ConfigError("lambda must be >= 0");
            } else if (k == "rate") c.rate = positive(parse_number<double>(v), "rate");
            else throw ConfigError("unknown key");
        } else if (e.section == "ensemble") {
            if (k == "n_traj") c.n_traj = std::size_t(at_least(parse_number<long long>(v), 1, "n_traj"));
            else if (k == "seed") c.seed = parse_number<std::uint64_t>(v);
            else if (k == "times") c.times = detail::parse_times(v);
            else if (k == "threads") c.threads = unsigned(at_least(parse_number<int>(v), 0, "threads"));
            else if (k == "fit_lo") c.fit_lo = parse_number<double>(v);
            else if (k == "fit_hi") c.fit_hi = parse_number<double>(v);
            else if (k == "cf_modes") {
                c.cf_modes.clear();
                for (auto const& m : detail::split(v, ',')) c.cf_modes.push_back(parse_number<int>(m));
            } else if (k == "eps_step") c.eps_step = positive(parse_number<double>(v), "eps_step");
            else throw ConfigError("unknown key");
        } else if (e.section == "spectral") {
            if (k == "pos_radius") c.trunc.pos_radius = int(at_least(parse_number<int>(v), 0, "pos_radius"));
            else if (k == "set_size") c.trunc.set_size = int(at_least(parse_number<int>(v), 0, "set_size"));
            else if (k == "set_radius") c.trunc.set_radius = int(at_least(parse_number<int>(v), 0, "set_radius"));
            else if (k == "k_points") c.k_points = int(at_least(parse_number<int>(v), 1, "k_points"));
            else if (k == "k_max") c.k_max = positive(parse_number<double>(v), "k_max");
            else if (k == "fd_step") c.fd_step = positive(parse_number<double>(v), "fd_step");
            else if (k == "residual_tol") c.residual_tol = positive(parse_number<double>(v), "residual_tol");
            else if (k == "solver_tol") c.solver_tol = positive(parse_number<double>(v), "solver_tol");
            else if (k == "gap_scan") c.gap_scan = parse_bool(v);
            else if (k == "weak_coupling") c.weak_coupling = parse_bool(v);
            else throw ConfigError("unknown key");
        } else if (e.section == "oracle") {
            if (k == "side") c.oracle_side = int(at_least(parse_number<int>(v), 1, "oracle side"));
            else if (k == "t") {
                c.oracle_t = parse_number<double>(v);
                if (!(c.oracle_t >= 0.0)) throw ConfigError("t must be >= 0");
            } else if (k == "n_traj") c.oracle_n_traj = std::size_t(at_least(parse_number<long long>(v), 1, "n_traj"));
            else if (k == "fiber_side") c.fiber_side = int(at_least(parse_number<int>(v), 1, "fiber_side"));
            else throw ConfigError("unknown key");
        } else {
            throw ConfigError("unknown section [" + e.section + "]");
        }
    } catch (ConfigError const& err) {
        throw ConfigError(e.origin + ": [" + e.section + "] " + e.key + ": " + err.what());
    } catch (std::invalid_argument const& err) {
        throw ConfigError(e.origin + ": [" + e.section + "] " + e.key + ": " + err.what());
    }
}

/// Applies entries in order, then fills defaults and checks cross-key constraints.
inline RunConfig resolve_config(std::vector<ConfigEntry> const& entries)
{
    RunConfig c;
    std::map<std::string, std::string> origin;
    for (auto const& e : entries) {
        apply_entry(c, e);
        origin[e.section + "." + e.key] = e.origin;
    }
    auto fail = [&](std::string const& key, std::string const& msg) {
        auto it = origin.find(key);
        throw ConfigError((it != origin.end() ? it->second : std::string("default")) + ": " + key + ": " + msg);
    };
    if (c.times.empty()) c.times = detail::parse_times("1, 2, 5, 10, 20:50:16");
    if (!(c.fit_lo < c.fit_hi)) fail("ensemble.fit_lo", "fit window must satisfy fit_lo < fit_hi");
    if (c.fit_hi > c.t_max() + 1e-12) fail("ensemble.fit_hi", "fit window extends beyond the last checkpoint");
    try {
        HoppingKernel h = c.hopping();
        auto rep = validate_hopping(h, c.dim);
        if (!rep.ok()) {
            std::string msg = "hopping kernel fails validation:";
            for (auto const& m : rep.messages) msg += " " + m + ";";
            fail("model.kernel", msg);
        }
    } catch (ConfigError const& err) {
        if (std::string(err.what()).find("model.kernel") != std::string::npos) throw;
        fail("model.kernel", err.what());
    } catch (std::invalid_argument const& err) {
        fail("model.kernel", err.what());
    }
    for (int m : c.cf_modes)
        if (m == 0 || 2 * std::abs(m) > c.side) fail("ensemble.cf_modes", "modes must be nonzero and below side/2");
    return c;
}

inline RunConfig load_config(std::string const& path, std::vector<std::string> const& overrides = {})
{
    std::vector<ConfigEntry> entries;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw ConfigError(path + ": cannot open config file");
        entries = read_ini(is, path);
    }
    for (auto const& s : overrides) entries.push_back(parse_override(s));
    return resolve_config(entries);
}

} // namespace flipdiff
