// SPDX-License-Identifier: Apache-2.0
//
// Unitary propagation of i d/dt psi = (T + lambda v(omega(t))) psi for
// piecewise-constant flip potentials, the time-ordered (Dyson) partial sums,
// and a dense density-matrix oracle.
#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flip_process.hpp"
#include "lattice.hpp"

namespace flipdiff {

struct CouplingConfig
{
    double lambda = 1.0;
};

struct PropagatorTolerance
{
    /// Bound on the Taylor remainder of each exponential step, in l2 norm.
    double eps_step = 1e-12;
    /// Amplitudes below this are outside the active support: they are
    /// trimmed after a step, and flips at sites whose amplitude provably
    /// stays below it do not split the propagation interval.
    double support_cutoff = 1e-13;
};

struct NormDriftError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// (H psi)(x) = (T psi)(x) + lambda v_x psi(x).
inline WaveFunction apply_hamiltonian(HoppingKernel const& h, double lambda,
                                      SpinConfig const& spins, WaveFunction const& psi)
{
    WaveFunction out = apply_hopping(h, psi);
    for (std::size_t i = 0; i < out.amp.size(); ++i)
        out.amp[i] += lambda * double(spins[i]) * psi.amp[i];
    return out;
}

namespace detail {

/// Smallest p with (b^{p+1}/(p+1)!) / (1 - b/(p+2)) <= eps, for b = |H| dt <= 1.
inline int taylor_terms(double b, double eps)
{
    double term = 1.0;
    for (int p = 0; p < 60; ++p) {
        term *= b / (p + 1);
        if (term / (1.0 - b / (p + 2)) <= eps) return std::max(p, 1);
    }
    return 60;
}

/// Bound on the amplitude reachable m hop layers away within time dt:
/// sum_{n >= m} (b^n / n!) <= b^m/m! e^b.
inline int reach_layers(double b, double cutoff, int cap)
{
    double term = std::exp(b);
    for (int m = 0; m < cap; ++m) {
        if (term <= cutoff) return m;
        term *= b / (m + 1);
    }
    return cap;
}

} // namespace detail

//---------------------------------------------------------------------------//
/*!
 * Taylor propagator for one (window, kernel, lambda). Two kernels:
 *  - full: every site, periodic neighbour table;
 *  - box:  a bounding box of the support, padded by the reach of the series,
 *          in a contiguous local buffer (no wrap needed while it fits).
 */
class Propagator
{
  public:
    Propagator(LatticeWindow w, HoppingKernel h, double lambda, PropagatorTolerance tol = {})
        : window_(w), kernel_(std::move(h)), lambda_(lambda), tol_(tol)
    {
        if (kernel_.dim != w.dim) throw std::invalid_argument("kernel and window dimensions differ");
        if (!(lambda >= 0.0)) throw std::invalid_argument("coupling lambda must be >= 0");
        bound_ = kernel_.l1() + lambda_;
        range_ = std::max(1, kernel_.range());
        const std::size_t n = w.site_count();
        const std::size_t nh = kernel_.terms.size();
        nbr_.resize(n * nh);
        for (std::size_t i = 0; i < n; ++i) {
            Coord x = w.coord(i);
            for (std::size_t z = 0; z < nh; ++z)
                nbr_[i * nh + z] = std::uint32_t(w.index(x - kernel_.terms[z].disp));
        }
    }

    LatticeWindow const& window() const { return window_; }
    HoppingKernel const& kernel() const { return kernel_; }
    double lambda() const { return lambda_; }
    double norm_bound() const { return bound_; }

    /// psi <- exp(-i dt H) psi on the whole window; pot[i] = lambda v_i.
    void step_full(std::vector<cplx>& psi, std::span<const double> pot, double dt)
    {
        if (dt == 0.0) return;
        const int sub = std::max(1, int(std::ceil(bound_ * dt)));
        const double h = dt / sub;
        const std::size_t n = psi.size();
        const std::size_t nh = kernel_.terms.size();
        term_.assign(n, 0.0);
        next_.assign(n, 0.0);
        for (int s = 0; s < sub; ++s) {
            const int p = detail::taylor_terms(bound_ * h, tol_.eps_step);
            std::copy(psi.begin(), psi.end(), term_.begin());
            const double nrm0 = std::sqrt(sq_norm(psi));
            for (int j = 1; j <= p; ++j) {
                const double c = h / j;
                double tn = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    cplx acc = pot[i] * term_[i];
                    for (std::size_t z = 0; z < nh; ++z)
                        acc += kernel_.terms[z].amp * term_[nbr_[i * nh + z]];
                    cplx v(c * acc.imag(), -c * acc.real());  // -i c acc
                    next_[i] = v;
                    psi[i] += v;
                    tn += std::norm(v);
                }
                std::swap(term_, next_);
                const double b = bound_ * h;
                if (std::sqrt(tn) * (b / (j + 1)) / (1.0 - b / (j + 2)) <= tol_.eps_step * nrm0) break;
            }
        }
    }

    // Box mode ----------------------------------------------------------------

    struct Box
    {
        Coord lo{}, hi{};
        bool full = false;
    };

    /// Bounding box (unwrapped, centred at the origin) of sites above cutoff.
    Box support_box(std::vector<cplx> const& psi) const
    {
        Box b;
        const double c2 = tol_.support_cutoff * tol_.support_cutoff;
        bool any = false;
        for (std::size_t i = 0; i < psi.size(); ++i) {
            if (std::norm(psi[i]) <= c2) continue;
            Coord x = window_.minimal_image(window_.coord(i));
            for (int a = 0; a < window_.dim; ++a) {
                if (!any || x[a] < b.lo[a]) b.lo[a] = x[a];
                if (!any || x[a] > b.hi[a]) b.hi[a] = x[a];
            }
            any = true;
        }
        if (!any) b.full = true;  // nothing significant: fall back to the exact full kernel
        for (int a = 0; a < window_.dim && !b.full; ++a)
            if (b.hi[a] - b.lo[a] + 1 >= window_.side / 2) b.full = true;
        return b;
    }

    /// Hop layers (in units of the kernel range) between a site and the box.
    int layers_outside(Box const& b, std::size_t site) const
    {
        if (b.full) return 0;
        Coord x = window_.coord(site);
        int dmax = 0;
        for (int a = 0; a < window_.dim; ++a) {
            const int L = window_.side;
            int dist = std::numeric_limits<int>::max();
            for (int k = -1; k <= 1; ++k) {
                const int c = x[a] + k * L;
                dist = std::min(dist, std::max({b.lo[a] - c, c - b.hi[a], 0}));
            }
            dmax = std::max(dmax, dist);
        }
        return (dmax + range_ - 1) / range_;
    }

    /// psi <- exp(-i dt H) psi assuming psi vanishes outside box b; returns
    /// the trimmed support box of the result.
    Box step_box(std::vector<cplx>& psi, std::span<const double> pot, double dt, Box b)
    {
        if (b.full) {
            step_full(psi, pot, dt);
            return b;
        }
        if (dt == 0.0) return b;
        const int sub = std::max(1, int(std::ceil(bound_ * dt)));
        const double h = dt / sub;
        for (int s = 0; s < sub; ++s) {
            b = substep_box(psi, pot, h, b);
            if (b.full) {
                for (int r = s + 1; r < sub; ++r) step_full(psi, pot, h);
                return b;
            }
        }
        return b;
    }

    double support_cutoff() const { return tol_.support_cutoff; }

  private:
    static double sq_norm(std::vector<cplx> const& v)
    {
        double s = 0.0;
        for (auto const& a : v) s += std::norm(a);
        return s;
    }

    Box substep_box(std::vector<cplx>& psi, std::span<const double> pot, double h, Box b)
    {
        const int d = window_.dim;
        const int p = detail::taylor_terms(bound_ * h, tol_.eps_step);
        const int pad = (p + 1) * range_;
        std::array<int, kMaxDim> ext{1, 1, 1}, width{1, 1, 1};
        for (int a = 0; a < d; ++a) {
            width[a] = b.hi[a] - b.lo[a] + 1;
            ext[a] = width[a] + 2 * pad;
            if (ext[a] >= window_.side) {
                b.full = true;
                step_full(psi, pot, h);
                return b;
            }
        }
        std::array<std::ptrdiff_t, kMaxDim> stride{1, 1, 1};
        for (int a = 1; a < d; ++a) stride[a] = stride[a - 1] * ext[a - 1];
        const std::size_t total = std::size_t(stride[d - 1] * ext[d - 1]);

        const std::size_t nh = kernel_.terms.size();
        offs_.resize(nh);
        hre_.resize(nh);
        him_.resize(nh);
        for (std::size_t z = 0; z < nh; ++z) {
            std::ptrdiff_t o = 0;
            for (int a = 0; a < d; ++a) o += kernel_.terms[z].disp[a] * stride[a];
            offs_[z] = o;
            hre_[z] = kernel_.terms[z].amp.real();
            him_[z] = kernel_.terms[z].amp.imag();
        }

        // local buffers: accumulated result, current term, next term, potential
        acc_re_.assign(total, 0.0); acc_im_.assign(total, 0.0);
        t_re_.assign(total, 0.0);   t_im_.assign(total, 0.0);
        n_re_.assign(total, 0.0);   n_im_.assign(total, 0.0);
        lpot_.assign(total, 0.0);
        sr_.resize(total);
        si_.resize(total);
        gidx_.assign(total, 0);

        auto for_rows = [&](int grow, auto&& fn) {
            // rows along axis 0 of the region box (width + 2*grow*range) centred in the buffer
            std::array<int, kMaxDim> lo{}, hi{};
            for (int a = 0; a < d; ++a) {
                lo[a] = pad - grow;
                hi[a] = pad + width[a] - 1 + grow;
            }
            std::array<int, kMaxDim> u = lo;
            for (;;) {
                std::ptrdiff_t base = 0;
                for (int a = 1; a < d; ++a) base += u[a] * stride[a];
                fn(base + lo[0], base + hi[0] + 1, u);
                int a = 1;
                for (; a < d; ++a) {
                    if (++u[a] <= hi[a]) break;
                    u[a] = lo[a];
                }
                if (a >= d) break;
            }
        };

        // global index map over the largest region, gather psi and potential
        const int full_grow = p * range_;
        for_rows(full_grow, [&](std::ptrdiff_t i0, std::ptrdiff_t i1, std::array<int, kMaxDim> const& u) {
            Coord c{};
            for (int a = 1; a < d; ++a) c[a] = u[a] + b.lo[a] - pad;
            for (std::ptrdiff_t i = i0; i < i1; ++i) {
                c[0] = int(i - i0) + (pad - full_grow) + b.lo[0] - pad;
                std::size_t g = window_.index(c);
                gidx_[i] = g;
                lpot_[i] = pot[g];
            }
        });
        double nrm0 = 0.0;
        for_rows(0, [&](std::ptrdiff_t i0, std::ptrdiff_t i1, auto const&) {
            for (std::ptrdiff_t i = i0; i < i1; ++i) {
                cplx v = psi[gidx_[i]];
                acc_re_[i] = t_re_[i] = v.real();
                acc_im_[i] = t_im_[i] = v.imag();
                nrm0 += std::norm(v);
            }
        });
        nrm0 = std::sqrt(nrm0);

        const double bnd = bound_ * h;
        for (int j = 1; j <= p; ++j) {
            const double c = h / j;
            double tn = 0.0;
            for_rows(j * range_, [&](std::ptrdiff_t i0, std::ptrdiff_t i1, auto const&) {
                double const* __restrict tr = t_re_.data();
                double const* __restrict ti = t_im_.data();
                double* __restrict nr = n_re_.data();
                double* __restrict ni = n_im_.data();
                double* __restrict ar = acc_re_.data();
                double* __restrict ai = acc_im_.data();
                double const* __restrict pv = lpot_.data();
                for (std::ptrdiff_t i = i0; i < i1; ++i) {
                    sr_[i] = pv[i] * tr[i];
                    si_[i] = pv[i] * ti[i];
                }
                double* __restrict sr = sr_.data();
                double* __restrict si = si_.data();
                for (std::size_t z = 0; z < nh; ++z) {
                    const std::ptrdiff_t o = offs_[z];
                    const double hr = hre_[z], hi = him_[z];
                    if (hi == 0.0) {
                        for (std::ptrdiff_t i = i0; i < i1; ++i) {
                            sr[i] += hr * tr[i - o];
                            si[i] += hr * ti[i - o];
                        }
                    } else {
                        for (std::ptrdiff_t i = i0; i < i1; ++i) {
                            sr[i] += hr * tr[i - o] - hi * ti[i - o];
                            si[i] += hr * ti[i - o] + hi * tr[i - o];
                        }
                    }
                }
                double local = 0.0;
                for (std::ptrdiff_t i = i0; i < i1; ++i) {
                    const double vr = c * si[i], vi = -c * sr[i];  // -i c s
                    nr[i] = vr;
                    ni[i] = vi;
                    ar[i] += vr;
                    ai[i] += vi;
                    local += vr * vr + vi * vi;
                }
                tn += local;
            });
            std::swap(t_re_, n_re_);
            std::swap(t_im_, n_im_);
            if (std::sqrt(tn) * (bnd / (j + 1)) / (1.0 - bnd / (j + 2)) <= tol_.eps_step * nrm0) break;
        }

        // trimmed bounding box of the result, in local coordinates
        const double c2 = tol_.support_cutoff * tol_.support_cutoff;
        std::array<int, kMaxDim> nlo{}, nhi{};
        bool any = false;
        for_rows(full_grow, [&](std::ptrdiff_t i0, std::ptrdiff_t i1, std::array<int, kMaxDim> const& u) {
            for (std::ptrdiff_t i = i0; i < i1; ++i) {
                if (acc_re_[i] * acc_re_[i] + acc_im_[i] * acc_im_[i] <= c2) continue;
                std::array<int, kMaxDim> uu = u;
                uu[0] = int(i - i0) + (pad - full_grow);
                for (int a = 0; a < d; ++a) {
                    if (!any || uu[a] < nlo[a]) nlo[a] = uu[a];
                    if (!any || uu[a] > nhi[a]) nhi[a] = uu[a];
                }
                any = true;
            }
        });
        Box nb;
        if (!any) {
            nb.full = true;
        } else {
            for (int a = 0; a < d; ++a) {
                nb.lo[a] = nlo[a] + b.lo[a] - pad;
                nb.hi[a] = nhi[a] + b.lo[a] - pad;
                if (nb.hi[a] - nb.lo[a] + 1 >= window_.side) nb.full = true;
            }
        }
        // scatter back; entries outside the new box are below the cutoff and dropped
        for_rows(full_grow, [&](std::ptrdiff_t i0, std::ptrdiff_t i1, std::array<int, kMaxDim> const& u) {
            for (std::ptrdiff_t i = i0; i < i1; ++i) {
                bool inside = any;
                if (!nb.full && any) {
                    std::array<int, kMaxDim> uu = u;
                    uu[0] = int(i - i0) + (pad - full_grow);
                    for (int a = 0; a < d; ++a)
                        if (uu[a] < nlo[a] || uu[a] > nhi[a]) inside = false;
                } else {
                    inside = true;
                }
                psi[gidx_[i]] = inside ? cplx(acc_re_[i], acc_im_[i]) : cplx(0.0);
            }
        });
        return nb;
    }

    LatticeWindow window_;
    HoppingKernel kernel_;
    double lambda_;
    PropagatorTolerance tol_;
    double bound_;
    int range_;
    std::vector<std::uint32_t> nbr_;
    std::vector<cplx> term_, next_;
    std::vector<std::ptrdiff_t> offs_;
    std::vector<double> hre_, him_;
    std::vector<double> acc_re_, acc_im_, t_re_, t_im_, n_re_, n_im_, lpot_, sr_, si_;
    std::vector<std::size_t> gidx_;
};

//---------------------------------------------------------------------------//
inline void check_finite(WaveFunction const& psi)
{
    if (!psi.finite()) throw std::invalid_argument("wave function has non-finite amplitudes");
}

inline std::vector<double> potential_values(SpinConfig const& spins, double lambda)
{
    std::vector<double> pot(spins.size());
    for (std::size_t i = 0; i < pot.size(); ++i) pot[i] = lambda * spins[i];
    return pot;
}

/// exp(-i dt (T + lambda v)) psi with the spins held fixed.
inline WaveFunction propagate_constant(WaveFunction psi, HoppingKernel const& h, double lambda,
                                       SpinConfig const& spins, double dt,
                                       PropagatorTolerance tol = {})
{
    if (!(dt >= 0.0)) throw std::invalid_argument("propagation interval must be >= 0");
    check_finite(psi);
    Propagator prop(psi.window, h, lambda, tol);
    auto pot = potential_values(spins, lambda);
    prop.step_full(psi.amp, pot, dt);
    return psi;
}

struct EvolutionStats
{
    std::size_t steps = 0;          // propagation intervals
    std::size_t skipped_flips = 0;  // flips applied without splitting the step
};

/*!
 * Propagate psi0 along the path, calling observe(i, t_i, psi) at each of the
 * sorted checkpoint times. Steps end at every flip that can affect the
 * solution above the support cutoff; other flips are applied at the start of
 * the step they fall in, which perturbs psi by at most
 * 2 lambda dt * support_cutoff per such flip.
 */
template <class Observe>
EvolutionStats evolve_checkpoints(Propagator& prop, WaveFunction psi, PotentialPath const& path,
                                  std::span<const double> times, Observe&& observe,
                                  bool use_box = true)
{
    check_finite(psi);
    if (!times.empty() && times.back() > path.t_max * (1.0 + 1e-12))
        throw std::out_of_range("checkpoint " + std::to_string(times.back())
                                + " beyond path horizon " + std::to_string(path.t_max));
    for (std::size_t i = 1; i < times.size(); ++i)
        if (times[i] < times[i - 1]) throw std::invalid_argument("checkpoint times must be sorted");
    if (path.initial.size() != psi.amp.size())
        throw std::invalid_argument("path window does not match wave function window");

    const double lambda = prop.lambda();
    std::vector<double> pot = potential_values(path.initial, lambda);
    auto flip = [&](std::uint32_t site) { pot[site] = -pot[site]; };

    EvolutionStats stats;
    Propagator::Box box = use_box ? prop.support_box(psi.amp) : Propagator::Box{{}, {}, true};
    const double cutoff = prop.support_cutoff();
    const int cap = prop.window().side;
    std::size_t ev = 0;
    double t = 0.0;
    auto const& events = path.events;

    for (std::size_t ci = 0; ci < times.size(); ++ci) {
        const double target = times[ci];
        while (t < target) {
            double t_next = target;
            std::size_t j = ev;
            for (; j < events.size() && events[j].time <= target; ++j) {
                if (box.full) { t_next = events[j].time; break; }
                const double b = prop.norm_bound() * (events[j].time - t);
                const int reach = detail::reach_layers(b, cutoff, cap);
                if (prop.layers_outside(box, events[j].site) < reach) {
                    t_next = events[j].time;
                    break;
                }
            }
            // flips in [ev, j) cannot see the wave before they happen
            for (std::size_t q = ev; q < j; ++q) flip(events[q].site);
            stats.skipped_flips += j - ev;
            ev = j;
            box = prop.step_box(psi.amp, pot, t_next - t, box);
            ++stats.steps;
            t = t_next;
            // the splitting flip itself, plus any simultaneous ones
            while (ev < events.size() && events[ev].time <= t) {
                flip(events[ev].site);
                ++ev;
            }
        }
        // events at exactly the checkpoint take effect (right-continuity)
        while (ev < events.size() && events[ev].time <= t) {
            flip(events[ev].site);
            ++ev;
        }
        observe(ci, target, static_cast<WaveFunction const&>(psi));
    }
    return stats;
}

/// psi_t for the path; t must lie within the path horizon.
inline WaveFunction evolve_trajectory(WaveFunction const& psi0, PotentialPath const& path, double t,
                                      HoppingKernel const& h, double lambda,
                                      PropagatorTolerance tol = {})
{
    if (!(t >= 0.0) || t > path.t_max)
        throw std::out_of_range("time " + std::to_string(t) + " beyond path horizon "
                                + std::to_string(path.t_max));
    Propagator prop(psi0.window, h, lambda, tol);
    WaveFunction out;
    double times[1] = {t};
    evolve_checkpoints(prop, psi0, path, times,
                       [&](std::size_t, double, WaveFunction const& psi) { out = psi; });
    return out;
}

//---------------------------------------------------------------------------//
/// Calls fn(t0, t1, spins) for the constant-potential intervals covering [0, t].
template <class Fn>
void for_each_interval(PotentialPath const& path, double t, Fn&& fn)
{
    SpinConfig s = path.initial;
    double t0 = 0.0;
    for (auto const& e : path.events) {
        if (e.time > t) break;
        if (e.time > t0) fn(t0, e.time, static_cast<SpinConfig const&>(s));
        s.spins[e.site] = std::int8_t(-s.spins[e.site]);
        t0 = e.time;
    }
    if (t > t0 || t == 0.0) fn(t0, t, static_cast<SpinConfig const&>(s));
}

inline constexpr int kMaxDysonOrder = 12;

/*!
 * Order-n partial sum of the time-ordered series. With H piecewise constant
 * the simplex integral factorises over intervals: the order-m part after
 * interval j is sum_a (-i tau_j H_j)^a / a! applied to the order-(m-a) part
 * before it. Returns the partial sum and, optionally, the norms of each order.
 */
inline WaveFunction dyson_partial_sum(WaveFunction const& psi0, PotentialPath const& path, double t,
                                      int order, HoppingKernel const& h, double lambda,
                                      std::vector<double>* term_norms = nullptr)
{
    if (order < 0 || order > kMaxDysonOrder)
        throw std::invalid_argument("Dyson order must be in [0, 12], got " + std::to_string(order));
    if (psi0.window.site_count() > 4096)
        throw std::invalid_argument("Dyson partial sums are meant for small windows (<= 4096 sites)");
    if (!(t >= 0.0) || t > path.t_max) throw std::out_of_range("time beyond path horizon");

    std::vector<WaveFunction> parts(order + 1, WaveFunction(psi0.window));
    parts[0] = psi0;
    for_each_interval(path, t, [&](double t0, double t1, SpinConfig const& spins) {
        const double tau = t1 - t0;
        std::vector<WaveFunction> out(order + 1, WaveFunction(psi0.window));
        for (int m = 0; m <= order; ++m) {
            // out[m] = sum_a (-i tau H)^a / a! parts[m-a]
            WaveFunction pw = parts[m];  // a = 0 term
            WaveFunction acc = pw;
            for (int a = 1; a <= m; ++a) {
                // pw_a = (-i tau H)^a/a! parts[m-a]: recompute from parts[m-a]
                WaveFunction v = parts[m - a];
                for (int q = 1; q <= a; ++q) {
                    v = apply_hamiltonian(h, lambda, spins, v);
                    for (auto& x : v.amp) x *= cplx(0.0, -tau / q);
                }
                for (std::size_t i = 0; i < acc.amp.size(); ++i) acc.amp[i] += v.amp[i];
            }
            out[m] = std::move(acc);
        }
        parts = std::move(out);
    });
    WaveFunction sum(psi0.window);
    if (term_norms) term_norms->clear();
    for (int m = 0; m <= order; ++m) {
        if (term_norms) term_norms->push_back(parts[m].norm());
        for (std::size_t i = 0; i < sum.amp.size(); ++i) sum.amp[i] += parts[m].amp[i];
    }
    return sum;
}

//---------------------------------------------------------------------------//
inline constexpr std::size_t kMaxDensitySites = 8;

/// Dense Hamiltonian T + lambda v on the window.
inline Eigen::MatrixXcd dense_hamiltonian(HoppingKernel const& h, double lambda,
                                          SpinConfig const& spins, LatticeWindow const& w)
{
    const std::size_t n = w.site_count();
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(Eigen::Index(n), Eigen::Index(n));
    for (std::size_t i = 0; i < n; ++i) {
        Coord x = w.coord(i);
        for (auto const& term : h.terms) H(Eigen::Index(i), Eigen::Index(w.index(x - term.disp))) += term.amp;
        H(Eigen::Index(i), Eigen::Index(i)) += lambda * double(spins[i]);
    }
    return H;
}

/// rho_t = U rho_0 U^dagger with U the interval-by-interval dense propagator.
inline Eigen::MatrixXcd evolve_density_oracle(Eigen::MatrixXcd rho0, PotentialPath const& path,
                                              double t, HoppingKernel const& h, double lambda,
                                              LatticeWindow const& w)
{
    if (w.site_count() > kMaxDensitySites)
        throw std::invalid_argument("density oracle limited to " + std::to_string(kMaxDensitySites)
                                    + " sites, window has " + std::to_string(w.site_count()));
    if (!(t >= 0.0) || t > path.t_max) throw std::out_of_range("time beyond path horizon");
    for_each_interval(path, t, [&](double t0, double t1, SpinConfig const& spins) {
        Eigen::MatrixXcd H = dense_hamiltonian(h, lambda, spins, w);
        Eigen::MatrixXcd U = (cplx(0.0, -(t1 - t0)) * H).exp();
        rho0 = U * rho0 * U.adjoint();
    });
    return rho0;
}

} // namespace flipdiff
