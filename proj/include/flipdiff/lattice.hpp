// SPDX-License-Identifier: Apache-2.0
//
// Periodic lattice windows, translation-invariant hopping kernels and their
// Fourier symbols.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace flipdiff {

using cplx = std::complex<double>;

inline constexpr int kMaxDim = 3;

/// Integer lattice vector; axes beyond the active dimension are zero.
using Coord = std::array<int, kMaxDim>;
/// Real wavevector; axes beyond the active dimension are ignored.
using KVector = std::array<double, kMaxDim>;

inline Coord operator+(Coord a, Coord const& b)
{
    for (int i = 0; i < kMaxDim; ++i) a[i] += b[i];
    return a;
}
inline Coord operator-(Coord a, Coord const& b)
{
    for (int i = 0; i < kMaxDim; ++i) a[i] -= b[i];
    return a;
}
inline Coord operator-(Coord a)
{
    for (auto& c : a) c = -c;
    return a;
}

inline int norm_inf(Coord const& a)
{
    int m = 0;
    for (int c : a) m = std::max(m, std::abs(c));
    return m;
}

inline double dot(KVector const& k, Coord const& x, int dim)
{
    double s = 0.0;
    for (int i = 0; i < dim; ++i) s += k[i] * x[i];
    return s;
}

inline double norm2(Coord const& x)
{
    double s = 0.0;
    for (int c : x) s += double(c) * c;
    return s;
}

inline double norm(KVector const& k, int dim)
{
    double s = 0.0;
    for (int i = 0; i < dim; ++i) s += k[i] * k[i];
    return std::sqrt(s);
}

inline void check_dim(int dim)
{
    if (dim < 1 || dim > kMaxDim)
        throw std::invalid_argument("lattice dimension must be 1, 2 or 3, got "
                                    + std::to_string(dim));
}

//---------------------------------------------------------------------------//
/// Periodic box [0, side)^dim approximating Z^dim.
struct LatticeWindow
{
    int dim = 1;
    int side = 1;

    LatticeWindow() = default;
    LatticeWindow(int d, int l) : dim(d), side(l)
    {
        check_dim(d);
        if (l < 1) throw std::invalid_argument("window side must be positive");
    }

    std::size_t site_count() const
    {
        std::size_t n = 1;
        for (int i = 0; i < dim; ++i) n *= std::size_t(side);
        return n;
    }

    int wrap(int c) const
    {
        int m = c % side;
        return m < 0 ? m + side : m;
    }

    /// Site index of a (possibly out-of-range) coordinate, wrapping every axis.
    std::size_t index(Coord const& c) const
    {
        std::size_t idx = 0;
        for (int i = dim - 1; i >= 0; --i) idx = idx * side + wrap(c[i]);
        return idx;
    }

    Coord coord(std::size_t idx) const
    {
        Coord c{};
        for (int i = 0; i < dim; ++i) {
            c[i] = int(idx % side);
            idx /= side;
        }
        return c;
    }

    /// Representative of c in (-side/2, side/2] on every axis.
    Coord minimal_image(Coord c) const
    {
        for (int i = 0; i < dim; ++i) {
            int w = wrap(c[i]);
            c[i] = (2 * w > side) ? w - side : w;
        }
        return c;
    }

    /// Wavevector 2*pi*m/side of the discrete dual grid.
    KVector dual_vector(Coord const& m) const
    {
        KVector k{};
        for (int i = 0; i < dim; ++i)
            k[i] = 2.0 * std::numbers::pi * m[i] / side;
        return k;
    }

    bool operator==(LatticeWindow const&) const = default;
};

//---------------------------------------------------------------------------//
struct HoppingTerm
{
    Coord disp{};
    cplx amp{};
};

/// Finite-support kernel h(x) of the hopping operator T psi(x) = sum_y h(x-y) psi(y).
struct HoppingKernel
{
    int dim = 1;
    std::vector<HoppingTerm> terms;

    /// h(+-e_j) = 1 on every axis.
    static HoppingKernel nearest_neighbor(int d)
    {
        check_dim(d);
        HoppingKernel h;
        h.dim = d;
        for (int j = 0; j < d; ++j) {
            Coord e{};
            e[j] = 1;
            h.terms.push_back({e, 1.0});
            h.terms.push_back({-e, 1.0});
        }
        return h;
    }

    cplx at(Coord const& x) const
    {
        cplx s = 0.0;
        for (auto const& t : terms)
            if (t.disp == x) s += t.amp;
        return s;
    }

    /// Largest |zeta|_inf in the support.
    int range() const
    {
        int r = 0;
        for (auto const& t : terms) r = std::max(r, norm_inf(t.disp));
        return r;
    }

    /// l1 norm sum |h(zeta)|, an upper bound on ||T||.
    double l1() const
    {
        double s = 0.0;
        for (auto const& t : terms) s += std::abs(t.amp);
        return s;
    }

    /// c = sum |zeta| |h(zeta)|, the Lipschitz constant of k -> K_k.
    double lipschitz_bound() const
    {
        double s = 0.0;
        for (auto const& t : terms) s += std::sqrt(norm2(t.disp)) * std::abs(t.amp);
        return s;
    }
};

//---------------------------------------------------------------------------//
struct ValidationReport
{
    bool self_adjoint = false;
    bool spans_space = false;
    bool finite_second_moment = false;
    std::vector<std::string> messages;

    bool ok() const { return self_adjoint && spans_space && finite_second_moment; }
};

namespace detail {
/// Rank of a set of integer vectors by Gaussian elimination with pivoting.
inline int rank_of(std::vector<std::array<double, kMaxDim>> rows, int dim)
{
    int rank = 0;
    for (int col = 0; col < dim && rank < int(rows.size()); ++col) {
        std::size_t piv = rank;
        for (std::size_t r = rank; r < rows.size(); ++r)
            if (std::abs(rows[r][col]) > std::abs(rows[piv][col])) piv = r;
        if (std::abs(rows[piv][col]) < 1e-12) continue;
        std::swap(rows[piv], rows[rank]);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (r == std::size_t(rank)) continue;
            double f = rows[r][col] / rows[rank][col];
            for (int c = 0; c < dim; ++c) rows[r][c] -= f * rows[rank][c];
        }
        ++rank;
    }
    return rank;
}
} // namespace detail

inline ValidationReport validate_hopping(HoppingKernel const& h, int dim)
{
    if (h.terms.empty())
        throw std::invalid_argument("hopping kernel is empty: at least one "
                                    "displacement with nonzero amplitude is required");
    check_dim(dim);
    ValidationReport rep;

    rep.self_adjoint = true;
    for (auto const& t : h.terms) {
        cplx mirror = h.at(-t.disp);
        cplx self = h.at(t.disp);
        if (std::abs(mirror - std::conj(self)) > 1e-12) {
            rep.self_adjoint = false;
            rep.messages.push_back("h(-x) != conj(h(x)) for some stored x");
            break;
        }
    }

    std::vector<std::array<double, kMaxDim>> rows;
    bool stray_axis = false;
    for (auto const& t : h.terms) {
        if (std::abs(t.amp) == 0.0) continue;
        std::array<double, kMaxDim> r{};
        for (int i = 0; i < kMaxDim; ++i) {
            if (i < dim) r[i] = t.disp[i];
            else if (t.disp[i] != 0) stray_axis = true;
        }
        rows.push_back(r);
    }
    int rank = detail::rank_of(rows, dim);
    rep.spans_space = rank == dim && !stray_axis;
    if (!rep.spans_space)
        rep.messages.push_back("support spans a subspace of rank " + std::to_string(rank)
                               + " < " + std::to_string(dim)
                               + " (some k != 0 is orthogonal to every hop)");

    // Finite support always has a finite second moment; non-finite amplitudes do not.
    rep.finite_second_moment = true;
    for (auto const& t : h.terms)
        if (!std::isfinite(t.amp.real()) || !std::isfinite(t.amp.imag()))
            rep.finite_second_moment = false;
    if (!rep.finite_second_moment) rep.messages.push_back("non-finite hopping amplitude");
    return rep;
}

inline cplx symbol_eval(HoppingKernel const& h, KVector const& k)
{
    cplx s = 0.0;
    for (auto const& t : h.terms) s += std::polar(1.0, -dot(k, t.disp, h.dim)) * t.amp;
    return s;
}

namespace detail {
inline double golden_max(auto&& f, double a, double b, int iters = 60)
{
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc > fd) { b = d; d = c; fd = fc; c = b - g * (b - a); fc = f(c); }
        else { a = c; c = d; fc = fd; d = a + g * (b - a); fd = f(d); }
    }
    return 0.5 * (a + b);
}
} // namespace detail

/// max_k |h^(k)| on the torus: grid doubling with a local golden-section polish
/// around the best grid point, until successive levels agree to 1e-9.
inline double hopping_norm(HoppingKernel const& h)
{
    const int d = h.dim;
    auto f = [&](KVector const& k) { return std::abs(symbol_eval(h, k)); };
    double prev = -1.0;
    for (int n = 8;; n *= 2) {
        std::size_t total = 1;
        for (int i = 0; i < d; ++i) total *= std::size_t(n);
        double best = -1.0;
        KVector kbest{};
        for (std::size_t idx = 0; idx < total; ++idx) {
            KVector k{};
            std::size_t rem = idx;
            for (int i = 0; i < d; ++i) {
                k[i] = 2.0 * std::numbers::pi * double(rem % n) / n;
                rem /= n;
            }
            double v = f(k);
            if (v > best) { best = v; kbest = k; }
        }
        const double step = 2.0 * std::numbers::pi / n;
        for (int sweep = 0; sweep < 4; ++sweep)
            for (int i = 0; i < d; ++i) {
                auto line = [&](double ki) { KVector k = kbest; k[i] = ki; return f(k); };
                double ki = detail::golden_max(line, kbest[i] - step, kbest[i] + step);
                if (line(ki) > best) { kbest[i] = ki; best = line(ki); }
            }
        if (prev >= 0.0 && std::abs(best - prev) < 1e-9) return std::max(best, prev);
        prev = std::max(best, prev);
        if (total > (std::size_t(1) << 22)) return prev;
    }
}

//---------------------------------------------------------------------------//
/// Complex field on a periodic window.
struct WaveFunction
{
    LatticeWindow window;
    std::vector<cplx> amp;

    WaveFunction() = default;
    explicit WaveFunction(LatticeWindow w) : window(w), amp(w.site_count(), 0.0) {}

    static WaveFunction delta(LatticeWindow w, Coord const& at = {})
    {
        WaveFunction psi(w);
        psi.amp[w.index(at)] = 1.0;
        return psi;
    }

    double norm_squared() const
    {
        double s = 0.0;
        for (auto const& a : amp) s += std::norm(a);
        return s;
    }
    double norm() const { return std::sqrt(norm_squared()); }

    bool finite() const
    {
        return std::all_of(amp.begin(), amp.end(), [](cplx a) {
            return std::isfinite(a.real()) && std::isfinite(a.imag());
        });
    }
};

inline cplx inner(WaveFunction const& a, WaveFunction const& b)
{
    cplx s = 0.0;
    for (std::size_t i = 0; i < a.amp.size(); ++i) s += std::conj(a.amp[i]) * b.amp[i];
    return s;
}

/// (T psi)(x) = sum_zeta h(zeta) psi(x - zeta) with periodic wrap.
inline WaveFunction apply_hopping(HoppingKernel const& h, WaveFunction const& psi)
{
    WaveFunction out(psi.window);
    auto const& w = psi.window;
    for (std::size_t i = 0; i < out.amp.size(); ++i) {
        Coord x = w.coord(i);
        cplx s = 0.0;
        for (auto const& t : h.terms) s += t.amp * psi.amp[w.index(x - t.disp)];
        out.amp[i] = s;
    }
    return out;
}

} // namespace flipdiff
