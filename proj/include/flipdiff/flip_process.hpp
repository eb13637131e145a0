// SPDX-License-Identifier: Apache-2.0
//
// The flip process: every site carries a spin +-1 that changes sign at the
// jump times of an independent rate-r Poisson clock.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lattice.hpp"
#include "philox.hpp"

namespace flipdiff {

struct FlipProcessConfig
{
    double rate = 1.0;  // per-site flip rate r
    LatticeWindow window;

    void validate() const
    {
        if (!(rate > 0.0) || !std::isfinite(rate))
            throw std::invalid_argument("flip rate must be positive and finite");
    }
};

struct SpinConfig
{
    std::vector<std::int8_t> spins;

    std::size_t size() const { return spins.size(); }
    int operator[](std::size_t i) const { return spins[i]; }
    bool operator==(SpinConfig const&) const = default;
};

struct FlipEvent
{
    double time;
    std::uint32_t site;
    bool operator==(FlipEvent const&) const = default;
};

/// Event record of one trajectory on [0, t_max]. Right-continuous: at an
/// event time the potential already has its post-flip value.
struct PotentialPath
{
    SpinConfig initial;
    std::vector<FlipEvent> events;
    double t_max = 0.0;

    bool operator==(PotentialPath const&) const = default;
};

/// Constants of the gap, sectoriality and non-degeneracy assumptions.
struct MarkovConstants
{
    double gap_T;         // Re<f, B f> >= |f|^2 / T on mean-zero f
    double sector_gamma;  // |Im<f,Bf>| <= gamma Re<f,Bf>
    double nondeg_chi;    // |B^{-1}(v_x - v_0)| >= chi

    /// For independent flips B e_A = 2r|A| e_A, so 1/T = 2r, gamma = 0 (B is
    /// self-adjoint) and |B^{-1}(e_{x} - e_{0})| = sqrt(2)/(2r).
    static MarkovConstants flip(double rate)
    {
        return {1.0 / (2.0 * rate), 0.0, 1.0 / (std::sqrt(2.0) * rate)};
    }
};

inline SpinConfig sample_invariant(FlipProcessConfig const& cfg, PhiloxStream& rng)
{
    cfg.validate();
    SpinConfig s;
    s.spins.resize(cfg.window.site_count());
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < s.spins.size(); ++i) {
        if (i % 64 == 0) bits = rng();
        s.spins[i] = (bits >> (i % 64)) & 1u ? std::int8_t(-1) : std::int8_t(1);
    }
    return s;
}

/// Aggregate-rate construction: gaps ~ Exp(r N), each event at a uniform site.
inline PotentialPath sample_path(FlipProcessConfig const& cfg, SpinConfig initial,
                                 double t_max, PhiloxStream& rng)
{
    cfg.validate();
    if (!(t_max > 0.0)) throw std::invalid_argument("path horizon t_max must be positive");
    const std::size_t n = cfg.window.site_count();
    if (initial.size() != n) throw std::invalid_argument("initial spin config does not match window");
    PotentialPath path;
    path.initial = std::move(initial);
    path.t_max = t_max;
    const double total_rate = cfg.rate * double(n);
    path.events.reserve(std::size_t(total_rate * t_max * 1.1) + 16);
    double t = 0.0;
    for (;;) {
        t += rng.exponential(total_rate);
        if (t > t_max) break;
        path.events.push_back({t, std::uint32_t(rng.below(n))});
    }
    return path;
}

/// Initial configuration drawn from the invariant measure, then a path.
inline PotentialPath sample_path(FlipProcessConfig const& cfg, double t_max, PhiloxStream& rng)
{
    SpinConfig init = sample_invariant(cfg, rng);
    return sample_path(cfg, std::move(init), t_max, rng);
}

inline SpinConfig potential_at(PotentialPath const& path, double t)
{
    if (!(t >= 0.0 && t <= path.t_max))
        throw std::out_of_range("time " + std::to_string(t) + " outside path horizon [0, "
                                + std::to_string(path.t_max) + "]");
    SpinConfig s = path.initial;
    for (auto const& e : path.events) {
        if (e.time > t) break;
        s.spins[e.site] = std::int8_t(-s.spins[e.site]);
    }
    return s;
}

//---------------------------------------------------------------------------//
// Dense oracles on {-1,1}^n. Configuration c has spin_i = -1 iff bit i is set.

inline constexpr int kMaxDenseSpins = 12;

inline int spin_of(std::uint32_t config, int site) { return (config >> site) & 1u ? -1 : 1; }

/// Matrix of B f(s) = r sum_i [f(s) - f(s with spin i flipped)].
inline Eigen::MatrixXd flip_generator_dense(int n, double rate)
{
    if (n < 1 || n > kMaxDenseSpins)
        throw std::invalid_argument("dense flip generator needs 1 <= n <= 12 sites, got "
                                    + std::to_string(n));
    const Eigen::Index dim = Eigen::Index(1) << n;
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index c = 0; c < dim; ++c) {
        b(c, c) = rate * n;
        for (int i = 0; i < n; ++i) b(c, c ^ (Eigen::Index(1) << i)) -= rate;
    }
    return b;
}

/// Character e_A(s) = prod_{i in A} s_i as a vector over configurations.
inline Eigen::VectorXd character_dense(int n, std::vector<int> const& subset)
{
    const Eigen::Index dim = Eigen::Index(1) << n;
    Eigen::VectorXd v(dim);
    for (Eigen::Index c = 0; c < dim; ++c) {
        int p = 1;
        for (int i : subset) p *= spin_of(std::uint32_t(c), i);
        v(c) = p;
    }
    return v;
}

//---------------------------------------------------------------------------//
// Line-oriented path format:
//   flipdiff-path 1
//   seed <u64>
//   rate <r>
//   window <dim> <side>
//   t_max <t>
//   initial <one '+' or '-' per site>
//   events <count>
//   <time> <site>        (one per line, %.17g so doubles round-trip)

inline void write_path(std::ostream& os, PotentialPath const& path, std::uint64_t seed,
                       FlipProcessConfig const& cfg)
{
    char buf[64];
    os << "flipdiff-path 1\n";
    os << "seed " << seed << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", cfg.rate);
    os << "rate " << buf << "\n";
    os << "window " << cfg.window.dim << " " << cfg.window.side << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", path.t_max);
    os << "t_max " << buf << "\n";
    os << "initial ";
    for (auto s : path.initial.spins) os << (s > 0 ? '+' : '-');
    os << "\nevents " << path.events.size() << "\n";
    for (auto const& e : path.events) {
        std::snprintf(buf, sizeof buf, "%.17g", e.time);
        os << buf << " " << e.site << "\n";
    }
}

struct SerializedPath
{
    PotentialPath path;
    std::uint64_t seed = 0;
    FlipProcessConfig config;
};

inline SerializedPath read_path(std::istream& is)
{
    auto fail = [](std::string const& what) {
        throw std::runtime_error("malformed path file: " + what);
    };
    SerializedPath out;
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "flipdiff-path" || version != 1) fail("bad header");
    if (!(is >> tag >> out.seed) || tag != "seed") fail("expected seed");
    if (!(is >> tag >> out.config.rate) || tag != "rate") fail("expected rate");
    int dim = 0, side = 0;
    if (!(is >> tag >> dim >> side) || tag != "window") fail("expected window");
    out.config.window = LatticeWindow(dim, side);
    if (!(is >> tag >> out.path.t_max) || tag != "t_max") fail("expected t_max");
    std::string spins;
    if (!(is >> tag >> spins) || tag != "initial") fail("expected initial");
    if (spins.size() != out.config.window.site_count()) fail("initial length mismatch");
    for (char c : spins) {
        if (c != '+' && c != '-') fail("initial spins must be '+' or '-'");
        out.path.initial.spins.push_back(c == '+' ? 1 : -1);
    }
    std::size_t count = 0;
    if (!(is >> tag >> count) || tag != "events") fail("expected events");
    out.path.events.resize(count);
    double prev = 0.0;
    for (auto& e : out.path.events) {
        if (!(is >> e.time >> e.site)) fail("truncated event list");
        if (!(e.time > prev) || e.time > out.path.t_max) fail("event times must increase within (0, t_max]");
        if (e.site >= out.config.window.site_count()) fail("event site out of range");
        prev = e.time;
    }
    return out;
}

} // namespace flipdiff
