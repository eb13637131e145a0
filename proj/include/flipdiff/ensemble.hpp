// SPDX-License-Identifier: Apache-2.0
//
// Monte Carlo averages over the flip process: mean |psi_t(x)|^2, the
// characteristic function, second moments, and diffusion-matrix fits.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "evolution.hpp"
#include "flip_process.hpp"
#include "stats.hpp"

namespace flipdiff {

struct EnsembleSpec
{
    HoppingKernel kernel = HoppingKernel::nearest_neighbor(1);
    double lambda = 1.0;
    double rate = 1.0;
    LatticeWindow window{1, 512};
    std::size_t n_traj = 100;
    std::uint64_t master_seed = 1;
    std::vector<double> times;
    /// Wavevectors whose characteristic function is recorded per trajectory
    /// (needed for error bars and for the CF fit).
    std::vector<KVector> cf_k;
    std::optional<WaveFunction> psi0;  // defaults to delta_0
    PropagatorTolerance tol;
    double drift_abort = 1e-6;
    unsigned threads = 1;

    void validate() const
    {
        if (n_traj < 1) throw std::invalid_argument("n_traj must be >= 1");
        if (times.empty()) throw std::invalid_argument("at least one checkpoint time is required");
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (!(times[i] >= 0.0) || !std::isfinite(times[i]))
                throw std::invalid_argument("checkpoint times must be finite and >= 0");
            if (i > 0 && !(times[i] > times[i - 1]))
                throw std::invalid_argument("checkpoint times must be strictly increasing");
        }
        if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
        if (!(rate > 0.0)) throw std::invalid_argument("flip rate must be > 0");
        if (kernel.dim != window.dim) throw std::invalid_argument("kernel and window dimensions differ");
        if (psi0 && !(psi0->window == window)) throw std::invalid_argument("psi0 window differs from ensemble window");
    }

    double t_max() const { return times.back(); }
};

/// Number of independent entries of a symmetric d x d matrix, ordered
/// (0,0),(0,1),..,(0,d-1),(1,1),...
inline int sym_count(int d) { return d * (d + 1) / 2; }

inline std::pair<int, int> sym_pair(int d, int m)
{
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b)
            if (m-- == 0) return {a, b};
    throw std::out_of_range("sym_pair");
}

struct MeanField
{
    LatticeWindow window;
    std::vector<double> times;
    std::size_t n_traj = 0;
    std::vector<std::vector<double>> mean;  // [checkpoint][site]
    std::vector<std::vector<double>> se;    // standard error of the mean

    double site_sum(std::size_t c) const
    {
        NeumaierSum s;
        for (double v : mean[c]) s.add(v);
        return s.value();
    }
};

/// Per-trajectory linear observables, kept for error bars of fitted quantities.
struct EnsembleRecords
{
    std::size_t n_traj = 0, n_times = 0, n_mom = 0, n_k = 0;
    std::vector<double> moments;  // [traj][time][mom]: sum x_a x_b |psi|^2
    std::vector<cplx> cf;         // [traj][time][k]:   sum e^{-ik.x} |psi|^2

    double moment(std::size_t j, std::size_t c, std::size_t m) const
    {
        return moments[(j * n_times + c) * n_mom + m];
    }
    cplx char_fn(std::size_t j, std::size_t c, std::size_t k) const { return cf[(j * n_times + c) * n_k + k]; }
};

struct EnsembleResult
{
    EnsembleSpec spec;
    MeanField field;
    EnsembleRecords records;
    double max_norm_drift = 0.0;
    std::size_t steps = 0, skipped_flips = 0;
};

namespace detail {

struct BlockPartial
{
    std::vector<NeumaierSum> sum, sumsq;  // [time * N + site]
    std::vector<double> moments;
    std::vector<cplx> cf;
    double max_drift = 0.0;
    std::size_t steps = 0, skipped = 0;
};

inline constexpr std::size_t kBlockSize = 32;

} // namespace detail

/*!
 * Averages over n_traj trajectories, each with a fresh invariant-measure
 * initial configuration and path drawn from the stream (master_seed, index).
 * Trajectories are processed in fixed blocks whose partial sums are merged
 * in block order, so the result does not depend on the thread count.
 */
inline EnsembleResult run_ensemble(EnsembleSpec const& spec)
{
    spec.validate();
    auto report = validate_hopping(spec.kernel, spec.window.dim);
    if (!report.ok()) {
        std::string msg = "hopping kernel fails validation:";
        for (auto const& m : report.messages) msg += " " + m;
        throw std::invalid_argument(msg);
    }

    const LatticeWindow w = spec.window;
    const int d = w.dim;
    const std::size_t N = w.site_count(), T = spec.times.size(), K = spec.cf_k.size();
    const std::size_t M = std::size_t(sym_count(d));
    const WaveFunction psi0 = spec.psi0 ? *spec.psi0 : WaveFunction::delta(w);
    const FlipProcessConfig fcfg{spec.rate, w};

    // per-site tables: minimal-image coordinates and CF phases
    std::vector<Coord> xs(N);
    for (std::size_t i = 0; i < N; ++i) xs[i] = w.minimal_image(w.coord(i));
    std::vector<cplx> phase(K * N);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < N; ++i) phase[k * N + i] = std::exp(cplx(0.0, -dot(spec.cf_k[k], xs[i], d)));

    EnsembleResult res;
    res.spec = spec;
    res.records.n_traj = spec.n_traj;
    res.records.n_times = T;
    res.records.n_mom = M;
    res.records.n_k = K;
    res.records.moments.assign(spec.n_traj * T * M, 0.0);
    res.records.cf.assign(spec.n_traj * T * K, 0.0);

    std::vector<NeumaierSum> total(T * N), total_sq(T * N);
    const std::size_t n_blocks = (spec.n_traj + detail::kBlockSize - 1) / detail::kBlockSize;
    std::map<std::size_t, detail::BlockPartial> ready;
    std::size_t next_merge = 0;
    std::mutex mu;
    std::atomic<std::size_t> next_block{0};
    std::exception_ptr failure;

    auto merge_ready = [&]() {
        // caller holds mu
        for (auto it = ready.find(next_merge); it != ready.end(); it = ready.find(next_merge)) {
            auto& p = it->second;
            for (std::size_t i = 0; i < T * N; ++i) {
                total[i].add(p.sum[i]);
                total_sq[i].add(p.sumsq[i]);
            }
            res.max_norm_drift = std::max(res.max_norm_drift, p.max_drift);
            res.steps += p.steps;
            res.skipped_flips += p.skipped;
            const std::size_t j0 = next_merge * detail::kBlockSize;
            std::copy(p.moments.begin(), p.moments.end(), res.records.moments.begin() + std::ptrdiff_t(j0 * T * M));
            std::copy(p.cf.begin(), p.cf.end(), res.records.cf.begin() + std::ptrdiff_t(j0 * T * K));
            ready.erase(it);
            ++next_merge;
        }
    };

    auto worker = [&]() {
        Propagator prop(w, spec.kernel, spec.lambda, spec.tol);
        std::vector<double> prob(N);
        for (;;) {
            const std::size_t b = next_block.fetch_add(1);
            if (b >= n_blocks) return;
            {
                std::lock_guard lock(mu);
                if (failure) return;
            }
            const std::size_t j0 = b * detail::kBlockSize;
            const std::size_t j1 = std::min(spec.n_traj, j0 + detail::kBlockSize);
            detail::BlockPartial part;
            part.sum.resize(T * N);
            part.sumsq.resize(T * N);
            part.moments.assign((j1 - j0) * T * M, 0.0);
            part.cf.assign((j1 - j0) * T * K, 0.0);
            try {
                for (std::size_t j = j0; j < j1; ++j) {
                    auto rng = make_stream(spec.master_seed, j);
                    auto path = sample_path(fcfg, std::max(spec.t_max(), 1e-300), rng);
                    auto st = evolve_checkpoints(
                        prop, psi0, path, spec.times, [&](std::size_t c, double t, WaveFunction const& psi) {
                            NeumaierSum nrm;
                            for (std::size_t i = 0; i < N; ++i) {
                                prob[i] = std::norm(psi.amp[i]);
                                nrm.add(prob[i]);
                            }
                            const double drift = std::abs(nrm.value() - psi0.norm_squared());
                            part.max_drift = std::max(part.max_drift, drift);
                            if (!(drift <= spec.drift_abort)) {
                                std::ostringstream os;
                                os << "norm drift " << drift << " exceeds " << spec.drift_abort << " in trajectory "
                                   << j << " at t=" << t << " (seed " << spec.master_seed << ", "
                                   << path.events.size() << " events)";
                                throw NormDriftError(os.str());
                            }
                            double* mom = &part.moments[((j - j0) * T + c) * M];
                            cplx* cf = K ? &part.cf[((j - j0) * T + c) * K] : nullptr;
                            for (std::size_t i = 0; i < N; ++i) {
                                const double p = prob[i];
                                part.sum[c * N + i].add(p);
                                part.sumsq[c * N + i].add(p * p);
                                if (p == 0.0) continue;
                                for (std::size_t m = 0; m < M; ++m) {
                                    auto [a, bb] = sym_pair(d, int(m));
                                    mom[m] += double(xs[i][a]) * double(xs[i][bb]) * p;
                                }
                                for (std::size_t k = 0; k < K; ++k) cf[k] += phase[k * N + i] * p;
                            }
                        });
                    part.steps += st.steps;
                    part.skipped += st.skipped_flips;
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
            std::lock_guard lock(mu);
            ready.emplace(b, std::move(part));
            merge_ready();
        }
    };

    const unsigned nthreads = std::max(1u, std::min<unsigned>(spec.threads, unsigned(n_blocks)));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    MeanField& f = res.field;
    f.window = w;
    f.times = spec.times;
    f.n_traj = spec.n_traj;
    f.mean.assign(T, std::vector<double>(N));
    f.se.assign(T, std::vector<double>(N));
    const double n = double(spec.n_traj);
    for (std::size_t c = 0; c < T; ++c)
        for (std::size_t i = 0; i < N; ++i) {
            const double m = total[c * N + i].value() / n;
            f.mean[c][i] = m;
            // the bootstrap standard error of a mean is the plug-in s/sqrt(n)
            const double var = std::max(0.0, total_sq[c * N + i].value() / n - m * m);
            f.se[c][i] = std::sqrt(var / n);
        }
    return res;
}

//---------------------------------------------------------------------------//
struct Estimate
{
    double value = 0.0;
    double se = std::numeric_limits<double>::quiet_NaN();
};

struct CFValue
{
    cplx value;
    double se = std::numeric_limits<double>::quiet_NaN();  // of the real part
};

inline std::size_t checkpoint_index(MeanField const& f, double t)
{
    for (std::size_t c = 0; c < f.times.size(); ++c)
        if (std::abs(f.times[c] - t) <= 1e-12 * std::max(1.0, t)) return c;
    throw std::invalid_argument("no checkpoint at t=" + std::to_string(t));
}

inline cplx characteristic_function(MeanField const& f, std::size_t c, KVector const& k)
{
    const int d = f.window.dim;
    NeumaierSum re, im;
    for (std::size_t i = 0; i < f.mean[c].size(); ++i) {
        const double p = f.mean[c][i];
        if (p == 0.0) continue;
        const double ph = -dot(k, f.window.minimal_image(f.window.coord(i)), d);
        re.add(std::cos(ph) * p);
        im.add(std::sin(ph) * p);
    }
    return {re.value(), im.value()};
}

/// CF of the mean field; the error bar is available for recorded wavevectors.
inline CFValue characteristic_function(EnsembleResult const& r, std::size_t c, KVector const& k)
{
    CFValue out{characteristic_function(r.field, c, k)};
    auto const& rec = r.records;
    for (std::size_t q = 0; q < r.spec.cf_k.size(); ++q) {
        if (r.spec.cf_k[q] != k) continue;
        NeumaierSum s, s2;
        for (std::size_t j = 0; j < rec.n_traj; ++j) {
            const double v = rec.char_fn(j, c, q).real();
            s.add(v);
            s2.add(v * v);
        }
        const double n = double(rec.n_traj), m = s.value() / n;
        out.se = n > 1 ? std::sqrt(std::max(0.0, (s2.value() / n - m * m) / (n - 1))) : 0.0;
        break;
    }
    return out;
}

struct SecondMoment
{
    double value = 0.0;                // sum |x|^2 field(x)
    double se = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> tensor;        // sum x_a x_b field(x), packed symmetric
    double boundary_mass = 0.0;        // mass within 5 sites of the window edge
    bool valid = true;
};

inline SecondMoment second_moment(MeanField const& f, std::size_t c)
{
    const int d = f.window.dim;
    const int half = f.window.side / 2;
    SecondMoment out;
    std::vector<NeumaierSum> t(std::size_t(sym_count(d)));
    NeumaierSum edge;
    for (std::size_t i = 0; i < f.mean[c].size(); ++i) {
        const double p = f.mean[c][i];
        if (p == 0.0) continue;
        Coord x = f.window.minimal_image(f.window.coord(i));
        bool near_edge = false;
        for (int a = 0; a < d; ++a) near_edge |= std::abs(x[a]) > half - 5;
        if (near_edge) edge.add(p);
        for (int m = 0; m < sym_count(d); ++m) {
            auto [a, b] = sym_pair(d, m);
            t[m].add(double(x[a]) * double(x[b]) * p);
        }
    }
    for (auto const& s : t) out.tensor.push_back(s.value());
    for (int a = 0; a < d; ++a) {
        int m = 0;
        for (int q = 0; q < sym_count(d); ++q)
            if (sym_pair(d, q) == std::pair{a, a}) m = q;
        out.value += out.tensor[m];
    }
    out.boundary_mass = edge.value();
    out.valid = out.boundary_mass <= 1e-6;
    return out;
}

inline SecondMoment second_moment(EnsembleResult const& r, std::size_t c)
{
    SecondMoment out = second_moment(r.field, c);
    auto const& rec = r.records;
    const int d = r.field.window.dim;
    NeumaierSum s, s2;
    for (std::size_t j = 0; j < rec.n_traj; ++j) {
        double v = 0.0;
        for (int m = 0; m < sym_count(d); ++m) {
            auto [a, b] = sym_pair(d, m);
            if (a == b) v += rec.moment(j, c, std::size_t(m));
        }
        s.add(v);
        s2.add(v * v);
    }
    const double n = double(rec.n_traj), m = s.value() / n;
    out.se = n > 1 ? std::sqrt(std::max(0.0, (s2.value() / n - m * m) / (n - 1))) : 0.0;
    return out;
}

//---------------------------------------------------------------------------//
enum class DiffusionMethod { cf_fit, m2_slope };

inline char const* to_string(DiffusionMethod m) { return m == DiffusionMethod::cf_fit ? "cf_fit" : "m2_slope"; }

struct DiffusionEstimate
{
    DiffusionMethod method = DiffusionMethod::m2_slope;
    Eigen::MatrixXd D;           // d x d, symmetric
    Eigen::MatrixXd covariance;  // of the packed entries of D (bootstrap)
    double t_lo = 0.0, t_hi = 0.0;
    double r2 = 0.0;             // goodness of the linear (m2) or Gaussian (cf) model
    double exponent = std::numeric_limits<double>::quiet_NaN();  // log-log slope of M2 (m2 only)
    std::size_t points = 0;
    bool positive_definite = false;
    bool flagged = false;
    std::string diagnostics;

    double sigma(int a, int b) const
    {
        const int d = int(D.rows());
        for (int m = 0; m < sym_count(d); ++m)
            if (sym_pair(d, m) == std::pair{std::min(a, b), std::max(a, b)})
                return std::sqrt(covariance(m, m));
        return std::numeric_limits<double>::quiet_NaN();
    }
};

namespace detail {

inline bool is_positive_definite(Eigen::MatrixXd const& D)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D);
    return es.eigenvalues().minCoeff() > 0.0;
}

inline Eigen::MatrixXd unpack_sym(Eigen::VectorXd const& v, int d)
{
    Eigen::MatrixXd D(d, d);
    for (int m = 0; m < sym_count(d); ++m) {
        auto [a, b] = sym_pair(d, m);
        D(a, b) = D(b, a) = v(m);
    }
    return D;
}

/// Mean moment series over a resample: [time][mom].
inline std::vector<std::vector<double>> mean_moments(EnsembleRecords const& rec,
                                                     std::vector<std::size_t> const& idx)
{
    std::vector<std::vector<double>> out(rec.n_times, std::vector<double>(rec.n_mom));
    for (std::size_t c = 0; c < rec.n_times; ++c)
        for (std::size_t m = 0; m < rec.n_mom; ++m) {
            NeumaierSum s;
            for (auto j : idx) s.add(rec.moment(j, c, m));
            out[c][m] = s.value() / double(idx.size());
        }
    return out;
}

inline std::vector<std::vector<double>> mean_cf_re(EnsembleRecords const& rec, std::vector<std::size_t> const& idx)
{
    std::vector<std::vector<double>> out(rec.n_times, std::vector<double>(rec.n_k));
    for (std::size_t c = 0; c < rec.n_times; ++c)
        for (std::size_t k = 0; k < rec.n_k; ++k) {
            NeumaierSum s;
            for (auto j : idx) s.add(rec.char_fn(j, c, k).real());
            out[c][k] = s.value() / double(idx.size());
        }
    return out;
}

inline std::vector<std::size_t> identity_indices(std::size_t n)
{
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

} // namespace detail

struct M2Fit
{
    Eigen::MatrixXd D;
    double r2 = 0.0;
    double exponent = 0.0;
};

/*!
 * Least-squares slopes of the moment tensor sum x_a x_b rho(x) against t.
 * With CF = exp(-t k.Dk) the tensor grows as 2 t D, so D is half the slope.
 */
inline M2Fit fit_m2_series(std::vector<double> const& t, std::vector<std::vector<double>> const& mom, int d)
{
    M2Fit out;
    Eigen::VectorXd packed(sym_count(d));
    for (int m = 0; m < sym_count(d); ++m) {
        std::vector<double> y(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) y[i] = mom[i][std::size_t(m)];
        packed(m) = 0.5 * fit_line(t, y).slope;
    }
    out.D = detail::unpack_sym(packed, d);
    std::vector<double> tr(t.size()), lt(t.size()), ltr(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double s = 0.0;
        for (int m = 0; m < sym_count(d); ++m) {
            auto [a, b] = sym_pair(d, m);
            if (a == b) s += mom[i][std::size_t(m)];
        }
        tr[i] = s;
        lt[i] = std::log(t[i]);
        ltr[i] = std::log(std::max(s, 1e-300));
    }
    out.r2 = fit_line(t, tr).r2;
    out.exponent = fit_line(lt, ltr).slope;
    return out;
}

/// Exponent band outside of which the M2 growth is not called diffusive.
inline constexpr double kDiffusiveExponentLo = 0.75, kDiffusiveExponentHi = 1.25;

inline DiffusionEstimate fit_diffusion_m2(EnsembleResult const& r, double t_lo, double t_hi)
{
    auto const& times = r.field.times;
    const int d = r.field.window.dim;
    std::vector<std::size_t> sel;
    for (std::size_t c = 0; c < times.size(); ++c)
        if (times[c] >= t_lo - 1e-12 && times[c] <= t_hi + 1e-12 && times[c] > 0.0) sel.push_back(c);
    if (sel.size() < 5)
        throw std::invalid_argument("fit_diffusion_m2 needs >= 5 checkpoints in [" + std::to_string(t_lo) + ", "
                                    + std::to_string(t_hi) + "], found " + std::to_string(sel.size()));
    std::vector<double> t;
    for (auto c : sel) t.push_back(times[c]);
    auto fit_on = [&](std::vector<std::size_t> const& idx) {
        auto mm = detail::mean_moments(r.records, idx);
        std::vector<std::vector<double>> s;
        for (auto c : sel) s.push_back(mm[c]);
        return fit_m2_series(t, s, d);
    };
    const auto full = fit_on(detail::identity_indices(r.records.n_traj));

    DiffusionEstimate est;
    est.method = DiffusionMethod::m2_slope;
    est.D = full.D;
    est.r2 = full.r2;
    est.exponent = full.exponent;
    est.t_lo = t_lo;
    est.t_hi = t_hi;
    est.points = sel.size();
    Eigen::MatrixXd draws(kBootstrapResamples, sym_count(d));
    for (std::size_t b = 0; b < kBootstrapResamples; ++b) {
        auto f = fit_on(bootstrap_indices(r.records.n_traj, r.spec.master_seed, b));
        for (int m = 0; m < sym_count(d); ++m) {
            auto [i, j] = sym_pair(d, m);
            draws(Eigen::Index(b), m) = f.D(i, j);
        }
    }
    est.covariance = sample_covariance(draws);
    est.positive_definite = detail::is_positive_definite(est.D);
    std::ostringstream diag;
    if (est.r2 < 0.95) {
        est.flagged = true;
        diag << "R^2 of linear M2 model " << est.r2 << " < 0.95; ";
    }
    if (!(est.exponent >= kDiffusiveExponentLo && est.exponent <= kDiffusiveExponentHi)) {
        est.flagged = true;
        diag << "log-log M2 exponent " << est.exponent << " not diffusive; ";
    }
    if (!est.positive_definite) {
        est.flagged = true;
        diag << "D not positive definite; ";
    }
    est.diagnostics = diag.str();
    return est;
}

//---------------------------------------------------------------------------//
struct CFPoint
{
    double t;
    KVector k;
    double re_cf;
};

struct CFFit
{
    Eigen::MatrixXd D;
    double r2 = 0.0;
    std::size_t used = 0;
};

/*!
 * Regression of -ln Re CF(k, t) on the monomials t k_a k_b (a <= b, off-diagonal
 * weighted by 2), with one free offset per wavevector absorbing the weight of
 * the diffusive mode at that k.
 */
inline CFFit fit_cf_series(std::vector<CFPoint> const& pts, int d)
{
    std::vector<KVector> ks;
    std::vector<std::size_t> kid;
    for (auto const& p : pts) {
        std::size_t q = 0;
        while (q < ks.size() && ks[q] != p.k) ++q;
        if (q == ks.size()) ks.push_back(p.k);
        kid.push_back(q);
    }
    const int S = sym_count(d);
    const Eigen::Index cols = S + Eigen::Index(ks.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(Eigen::Index(pts.size()), cols);
    Eigen::VectorXd y(Eigen::Index(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (int m = 0; m < S; ++m) {
            auto [a, b] = sym_pair(d, m);
            X(Eigen::Index(i), m) = pts[i].t * pts[i].k[a] * pts[i].k[b] * (a == b ? 1.0 : 2.0);
        }
        X(Eigen::Index(i), S + Eigen::Index(kid[i])) = 1.0;
        y(Eigen::Index(i)) = -std::log(pts[i].re_cf);
    }
    auto ls = least_squares(X, y);
    CFFit out;
    out.D = detail::unpack_sym(ls.coef.head(S), d);
    out.r2 = ls.r2;
    out.used = pts.size();
    return out;
}

inline DiffusionEstimate fit_diffusion_cf(EnsembleResult const& r, double t_lo, double t_hi,
                                          std::vector<KVector> const& ks)
{
    const int d = r.field.window.dim;
    auto const& times = r.field.times;
    std::vector<std::size_t> sel, kq;
    for (std::size_t c = 0; c < times.size(); ++c)
        if (times[c] >= t_lo - 1e-12 && times[c] <= t_hi + 1e-12) sel.push_back(c);
    for (auto const& k : ks) {
        std::size_t q = 0;
        while (q < r.spec.cf_k.size() && r.spec.cf_k[q] != k) ++q;
        if (q == r.spec.cf_k.size()) throw std::invalid_argument("fit_diffusion_cf: wavevector was not recorded");
        kq.push_back(q);
    }
    // points whose Re CF is not clearly positive are dropped
    std::vector<std::pair<std::size_t, std::size_t>> use;
    for (auto c : sel)
        for (std::size_t i = 0; i < ks.size(); ++i) {
            auto v = characteristic_function(r, c, ks[i]);
            if (v.value.real() > 3.0 * v.se && v.value.real() > 0.0) use.push_back({c, i});
        }
    DiffusionEstimate est;
    est.method = DiffusionMethod::cf_fit;
    est.t_lo = t_lo;
    est.t_hi = t_hi;
    est.points = use.size();
    est.D = Eigen::MatrixXd::Constant(d, d, std::numeric_limits<double>::quiet_NaN());
    if (use.size() < 6 || use.size() < std::size_t(sym_count(d)) + ks.size() + 1) {
        est.flagged = true;
        est.diagnostics = "only " + std::to_string(use.size()) + " usable CF points";
        est.covariance = Eigen::MatrixXd::Constant(sym_count(d), sym_count(d), std::numeric_limits<double>::quiet_NaN());
        return est;
    }
    auto fit_on = [&](std::vector<std::size_t> const& idx) {
        auto cf = detail::mean_cf_re(r.records, idx);
        std::vector<CFPoint> pts;
        for (auto [c, i] : use) pts.push_back({times[c], ks[i], std::max(cf[c][kq[i]], 1e-300)});
        return fit_cf_series(pts, d);
    };
    auto full = fit_on(detail::identity_indices(r.records.n_traj));
    est.D = full.D;
    est.r2 = full.r2;
    Eigen::MatrixXd draws(kBootstrapResamples, sym_count(d));
    for (std::size_t b = 0; b < kBootstrapResamples; ++b) {
        auto f = fit_on(bootstrap_indices(r.records.n_traj, r.spec.master_seed, b));
        for (int m = 0; m < sym_count(d); ++m) {
            auto [i, j] = sym_pair(d, m);
            draws(Eigen::Index(b), m) = f.D(i, j);
        }
    }
    est.covariance = sample_covariance(draws);
    est.positive_definite = detail::is_positive_definite(est.D);
    if (!est.positive_definite) {
        est.flagged = true;
        est.diagnostics = "D not positive definite";
    }
    return est;
}

//---------------------------------------------------------------------------//
/// Diffusive rescaling k / sqrt(tau) snapped to the window's dual grid.
struct SnappedK
{
    KVector k{};
    double snap_error = 0.0;  // |snapped - requested|
};

inline SnappedK snap_to_dual(LatticeWindow const& w, KVector const& k)
{
    SnappedK s;
    double e2 = 0.0;
    for (int a = 0; a < w.dim; ++a) {
        const double step = 2.0 * std::numbers::pi / w.side;
        s.k[a] = std::round(k[a] / step) * step;
        e2 += (s.k[a] - k[a]) * (s.k[a] - k[a]);
    }
    s.snap_error = std::sqrt(e2);
    return s;
}

/// Gaussian-shape diagnostic at one checkpoint: -ln Re CF(k) against |k|^2.
struct GaussianShape
{
    LinearFit fit;
    double intercept_se = std::numeric_limits<double>::quiet_NaN();  // bootstrap
    double slope_se = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> k2, y, y_se;
};

inline GaussianShape gaussian_shape(EnsembleResult const& r, std::size_t c, std::vector<KVector> const& ks)
{
    const int d = r.field.window.dim;
    std::vector<std::size_t> kq;
    for (auto const& k : ks) {
        std::size_t q = 0;
        while (q < r.spec.cf_k.size() && r.spec.cf_k[q] != k) ++q;
        if (q == r.spec.cf_k.size()) throw std::invalid_argument("gaussian_shape: wavevector was not recorded");
        kq.push_back(q);
    }
    GaussianShape g;
    auto series = [&](std::vector<std::size_t> const& idx) {
        auto cf = detail::mean_cf_re(r.records, idx);
        std::vector<double> y;
        for (auto q : kq) y.push_back(-std::log(std::max(cf[c][q], 1e-300)));
        return y;
    };
    for (auto const& k : ks) {
        double s = 0.0;
        for (int a = 0; a < d; ++a) s += k[a] * k[a];
        g.k2.push_back(s);
    }
    g.y = series(detail::identity_indices(r.records.n_traj));
    for (std::size_t i = 0; i < ks.size(); ++i) {
        auto v = characteristic_function(r, c, ks[i]);
        g.y_se.push_back(v.se / v.value.real());
    }
    g.fit = fit_line(g.k2, g.y);
    Eigen::MatrixXd draws(kBootstrapResamples, 2);
    for (std::size_t b = 0; b < kBootstrapResamples; ++b) {
        auto f = fit_line(g.k2, series(bootstrap_indices(r.records.n_traj, r.spec.master_seed, b)));
        draws(Eigen::Index(b), 0) = f.intercept;
        draws(Eigen::Index(b), 1) = f.slope;
    }
    auto cov = sample_covariance(draws);
    g.intercept_se = std::sqrt(cov(0, 0));
    g.slope_se = std::sqrt(cov(1, 1));
    return g;
}

/// Log-log slope of M2 over checkpoints in [t_lo, t_hi], with bootstrap error.
inline Estimate m2_exponent(EnsembleResult const& r, double t_lo, double t_hi)
{
    auto const& times = r.field.times;
    const int d = r.field.window.dim;
    std::vector<std::size_t> sel;
    for (std::size_t c = 0; c < times.size(); ++c)
        if (times[c] >= t_lo - 1e-12 && times[c] <= t_hi + 1e-12 && times[c] > 0.0) sel.push_back(c);
    if (sel.size() < 2) throw std::invalid_argument("m2_exponent needs >= 2 checkpoints in the window");
    auto slope = [&](std::vector<std::size_t> const& idx) {
        auto mm = detail::mean_moments(r.records, idx);
        std::vector<double> lx, ly;
        for (auto c : sel) {
            double s = 0.0;
            for (int m = 0; m < sym_count(d); ++m) {
                auto [a, b] = sym_pair(d, m);
                if (a == b) s += mm[c][std::size_t(m)];
            }
            lx.push_back(std::log(times[c]));
            ly.push_back(std::log(std::max(s, 1e-300)));
        }
        return fit_line(lx, ly).slope;
    };
    Estimate e{slope(detail::identity_indices(r.records.n_traj))};
    Eigen::MatrixXd draws(kBootstrapResamples, 1);
    for (std::size_t b = 0; b < kBootstrapResamples; ++b)
        draws(Eigen::Index(b), 0) = slope(bootstrap_indices(r.records.n_traj, r.spec.master_seed, b));
    e.se = std::sqrt(sample_covariance(draws)(0, 0));
    return e;
}

/// Geometric times t_max/2^m (m = n_geom-1..1) followed by a linear grid on [t_max/2, t_max].
inline std::vector<double> default_checkpoints(double t_max, int n_geom = 6, int n_lin = 16)
{
    std::vector<double> t;
    for (int m = n_geom; m >= 2; --m) t.push_back(t_max / std::pow(2.0, m));
    for (int i = 0; i < n_lin; ++i) t.push_back(t_max / 2 + (t_max / 2) * i / (n_lin - 1));
    return t;
}

} // namespace flipdiff
