// SPDX-License-Identifier: Apache-2.0
//
// Dispersion eigenvalue E(k) of L_k, the diffusion matrix D = Hess E(0) / 2,
// the weak-coupling limit D0 = lim lambda^2 D, and the spectral gap of L_0.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <future>
#include <string>
#include <vector>

#include "augmented.hpp"
#include "character_basis.hpp"
#include "flip_process.hpp"
#include "krylov.hpp"
#include "lattice.hpp"

namespace flipdiff {

struct SpectralOptions
{
    double residual_tol = 1e-10;  // eigen-residual and linear-solve acceptance
    double solver_tol = 1e-12;    // GMRES target
    double fd_step = 1e-3;
    int max_iter = 60;            // inverse-iteration sweeps
    int gmres_restart = 100;
    int gmres_max_iter = 20000;
    double deflation_shift = -1e-3;
};

struct NearZeroEigen
{
    cplx E{};
    Vector vec;
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
    bool exact_kernel = false;
    cplx second{};            // nearest eigenvalue after deflating (E, vec)
    double second_residual = 0.0;
    bool second_found = false;
    std::string diagnostics;
};

/// Inverse iteration with shift 0 started from delta_0 (x) e_0. When L e = 0
/// exactly (k = 0) the kernel vector is returned as is.
inline NearZeroEigen eigenvalue_near_zero(SparseOperator const& Lk, CharacterBasis const& basis,
                                          SpectralOptions const& opt = {}, bool deflate = true)
{
    NearZeroEigen out;
    const SparseMatrix& L = Lk.matrix;
    const auto n = L.rows();
    const auto o = Eigen::Index(basis.origin());
    Vector e = Vector::Zero(n);
    e(o) = 1.0;
    Vector Le = L * e;
    if (Le.norm() == 0.0) {
        out.E = 0.0;
        out.vec = e;
        out.exact_kernel = out.converged = true;
    } else {
        ShiftInvert si(L, 0.0);
        if (!si.ok()) {
            out.diagnostics = "LU factorisation of L_k failed at shift 0";
            return out;
        }
        Vector v = e;
        double best = INFINITY;
        for (out.iterations = 1; out.iterations <= opt.max_iter; ++out.iterations) {
            Vector y = si.solve(v);
            if (!y.allFinite()) {
                out.diagnostics = "non-finite iterate at sweep " + std::to_string(out.iterations);
                break;
            }
            // fix the phase so that the origin component is real positive
            cplx ph = y(o) / std::abs(y(o));
            v = y / (y.norm() * ph);
            Vector Lv = L * v;
            cplx E = v.dot(Lv);
            double res = (Lv - E * v).norm();
            if (res < best) {
                best = res;
                out.E = E;
                out.vec = v;
                out.residual = res;
            } else if (best <= opt.residual_tol) {
                break;  // stagnated at round-off
            }
            if (res < 1e-15) break;
        }
        out.converged = out.residual <= opt.residual_tol;
        if (!out.converged)
            out.diagnostics = "inverse iteration stalled at residual " + std::to_string(out.residual) + " after "
                              + std::to_string(out.iterations) + " sweeps";
    }
    if (deflate && out.converged) {
        const cplx wv = out.vec(o);
        Vector r = out.vec;
        auto project = [&](Vector& x) { x -= r * (x(o) / wv); };
        try {
            ArnoldiResult ar = nearest_eigenvalues(L, opt.deflation_shift, 3, opt.residual_tol, 0, 30, project);
            for (auto const& p : ar.pairs) {
                if (std::abs(p.value - out.E) < 1e-8) continue;
                out.second = p.value;
                out.second_residual = p.residual;
                out.second_found = p.residual <= opt.residual_tol * std::max(1.0, std::abs(p.value));
                break;
            }
        } catch (std::exception const& ex) {
            out.diagnostics += std::string(out.diagnostics.empty() ? "" : "; ") + "deflated iteration: " + ex.what();
        }
        if (!out.second_found)
            out.diagnostics += std::string(out.diagnostics.empty() ? "" : "; ") + "deflated iteration did not converge";
    }
    return out;
}

inline cplx dispersion(CharacterBasis const& basis, KVector const& k, double lambda, double rate, HoppingKernel const& h,
                       SpectralOptions const& opt = {})
{
    auto r = eigenvalue_near_zero(build_L(basis, k, lambda, rate, h), basis, opt, false);
    if (!r.converged) throw std::runtime_error("E(k) did not converge: " + r.diagnostics);
    return r.E;
}

/// Central-difference gradient and half Hessian of E at k = 0.
struct DispersionDerivatives
{
    Eigen::VectorXd gradient;
    Eigen::MatrixXd half_hessian;
    double step = 0.0;
};

inline DispersionDerivatives dispersion_derivatives(CharacterBasis const& basis, double lambda, double rate,
                                                    HoppingKernel const& h, SpectralOptions const& opt = {})
{
    const int d = basis.dim();
    const double s = opt.fd_step;
    auto E = [&](int i, double a, int j, double b) {
        KVector k{};
        if (i >= 0) k[i] += a;
        if (j >= 0) k[j] += b;
        return dispersion(basis, k, lambda, rate, h, opt).real();
    };
    DispersionDerivatives out;
    out.step = s;
    out.gradient.resize(d);
    out.half_hessian.resize(d, d);
    const double e0 = E(-1, 0, -1, 0);
    for (int i = 0; i < d; ++i) {
        const double ep = E(i, s, -1, 0), em = E(i, -s, -1, 0);
        out.gradient(i) = (ep - em) / (2 * s);
        out.half_hessian(i, i) = 0.5 * (ep - 2 * e0 + em) / (s * s);
        for (int j = 0; j < i; ++j) {
            const double v = (E(i, s, j, s) - E(i, s, j, -s) - E(i, -s, j, s) + E(i, -s, j, -s)) / (4 * s * s);
            out.half_hessian(i, j) = out.half_hessian(j, i) = 0.5 * v;
        }
    }
    return out;
}

//---------------------------------------------------------------------------//
struct DiffusionMatrixResult
{
    Eigen::MatrixXd D;        // symmetrised
    Eigen::MatrixXd D_raw;
    std::vector<double> residuals;
    std::vector<int> iterations;
    double rhs_origin_overlap = 0.0;  // |<delta_0 (x) 1, dK_j delta_0 (x) 1>|, must vanish
    double min_eigenvalue = 0.0;
    std::size_t clipped = 0;
    bool converged = false;
    bool positive_definite = false;
    bool flagged = true;
    std::vector<std::string> warnings;
};

/*!
 * D_ij = Re <dK_i e, y_j>, (L_0 + e e^*) y_j = dK_j e with e = delta_0 (x) 1.
 * Adding e e^* removes the kernel: e spans both the left and the right
 * kernel of L_0, and every right-hand side is orthogonal to it.
 */
inline DiffusionMatrixResult diffusion_matrix(CharacterBasis const& basis, double lambda, double rate,
                                              HoppingKernel const& h, SpectralOptions const& opt = {})
{
    const int d = basis.dim();
    DiffusionMatrixResult out;
    SparseOperator L0 = build_L(basis, KVector{}, lambda, rate, h);
    out.clipped = L0.clipped;
    const auto n = L0.matrix.rows();
    const auto o = Eigen::Index(basis.origin());
    Vector pre(n);
    for (Eigen::Index i = 0; i < n; ++i) pre(i) = 1.0 / (2.0 * rate * double(basis[std::size_t(i)].A.size()) + 1.0);
    LinearMap A = [&](Vector const& x) {
        Vector y = L0.matrix * x;
        y(o) += x(o);
        return y;
    };
    std::vector<Vector> b(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
        SparseOperator dK = build_dK(basis, KVector{}, h, j);
        b[std::size_t(j)] = dK.matrix.col(o);
        out.rhs_origin_overlap = std::max(out.rhs_origin_overlap, std::abs(b[std::size_t(j)](o)));
    }
    std::vector<std::future<GmresResult>> jobs;
    for (int j = 0; j < d; ++j)
        jobs.push_back(std::async(std::launch::async, [&, j] {
            return gmres(A, pre, b[std::size_t(j)], opt.solver_tol, opt.gmres_restart, opt.gmres_max_iter);
        }));
    out.converged = true;
    for (int j = 0; j < d; ++j) {
        GmresResult g = jobs[std::size_t(j)].get();
        y[std::size_t(j)] = g.x;
        out.residuals.push_back(g.residual);
        out.iterations.push_back(g.iterations);
        if (!(g.residual <= opt.residual_tol)) {
            out.converged = false;
            out.warnings.push_back("GMRES stagnated for axis " + std::to_string(j) + " at relative residual "
                                   + std::to_string(g.residual) + " after " + std::to_string(g.iterations)
                                   + " iterations");
        }
    }
    out.D_raw.resize(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out.D_raw(i, j) = b[std::size_t(i)].dot(y[std::size_t(j)]).real();
    out.D = 0.5 * (out.D_raw + out.D_raw.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.D);
    out.min_eigenvalue = es.eigenvalues().minCoeff();
    out.positive_definite = out.D.allFinite() && out.min_eigenvalue > 0.0;
    if (!out.positive_definite) out.warnings.push_back("D is not positive definite");
    if (out.rhs_origin_overlap > 1e-14) out.warnings.push_back("right-hand side overlaps the kernel vector");
    if (lambda > 0.0 && basis.truncation().set_size == 0)
        out.warnings.push_back("set_size 0 clips the whole image of V");
    out.flagged = !out.converged || !out.positive_definite;
    return out;
}

//---------------------------------------------------------------------------//
struct WeakCouplingResult
{
    Eigen::MatrixXd D0;
    Eigen::MatrixXcd gamma0;       // P0 V (iK_0 + B)^{-1} V P0 on the e_0 sector, delta_0 removed
    double condition = 0.0;
    double min_real_part = 0.0;    // smallest eigenvalue of (Gamma0 + Gamma0^*)/2
    bool flagged = true;
    std::vector<std::string> warnings;
};

inline WeakCouplingResult weak_coupling_D0(CharacterBasis const& basis, double rate, HoppingKernel const& h)
{
    const int d = basis.dim();
    WeakCouplingResult out;
    SparseOperator L = build_L(basis, KVector{}, 0.0, rate, h);  // i K_0 + B
    SparseOperator V = build_V(basis);
    std::vector<Eigen::Index> sec0, rest;
    for (std::size_t i = 0; i < basis.size(); ++i) (basis[i].A.empty() ? sec0 : rest).push_back(Eigen::Index(i));
    const auto o = Eigen::Index(basis.origin());
    std::vector<Eigen::Index> keep;
    for (auto i : sec0)
        if (i != o) keep.push_back(i);
    std::vector<Eigen::Index> pos(basis.size(), -1);
    for (std::size_t i = 0; i < rest.size(); ++i) pos[std::size_t(rest[i])] = Eigen::Index(i);
    if (rest.empty()) {
        out.warnings.push_back("set_size 0 leaves no |A| > 0 sector for Gamma0");
        return out;
    }

    std::vector<Eigen::Triplet<cplx>> trip;
    for (int c = 0; c < L.matrix.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(L.matrix, c); it; ++it)
            if (pos[std::size_t(it.row())] >= 0 && pos[std::size_t(c)] >= 0)
                trip.emplace_back(int(pos[std::size_t(it.row())]), int(pos[std::size_t(c)]), it.value());
    SparseMatrix Lr(Eigen::Index(rest.size()), Eigen::Index(rest.size()));
    Lr.setFromTriplets(trip.begin(), trip.end());
    Lr.makeCompressed();
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(Lr);
    if (lu.info() != Eigen::Success) {
        out.warnings.push_back("(iK_0 + B) restricted to |A| > 0 is singular");
        return out;
    }
    const auto m = Eigen::Index(keep.size());
    out.gamma0.resize(m, m);
    for (Eigen::Index c = 0; c < m; ++c) {
        Vector col = V.matrix.col(keep[std::size_t(c)]);
        Vector rhs(Eigen::Index(rest.size()));
        for (std::size_t i = 0; i < rest.size(); ++i) rhs(Eigen::Index(i)) = col(rest[i]);
        Vector z = lu.solve(rhs);
        Vector full = Vector::Zero(L.matrix.rows());
        for (std::size_t i = 0; i < rest.size(); ++i) full(rest[i]) = z(Eigen::Index(i));
        Vector Vz = V.matrix * full;
        for (Eigen::Index r = 0; r < m; ++r) out.gamma0(r, c) = Vz(keep[std::size_t(r)]);
    }
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(out.gamma0);
    const auto& sv = svd.singularValues();
    out.condition = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> herm(0.5 * (out.gamma0 + out.gamma0.adjoint()));
    out.min_real_part = herm.eigenvalues().minCoeff();
    if (!(out.condition < 1e12)) {
        out.warnings.push_back("Gamma0 is near-singular (condition " + std::to_string(out.condition) + ")");
        return out;
    }
    // hopping vectors u_j(x) = x_j h(x) on the e_0 sector
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Zero(m, d);
    for (Eigen::Index r = 0; r < m; ++r) {
        Coord x = basis[std::size_t(keep[std::size_t(r)])].x;
        for (int j = 0; j < d; ++j) U(r, j) = double(x[j]) * h.at(x);
    }
    Eigen::MatrixXcd G = out.gamma0.partialPivLu().solve(U);
    Eigen::MatrixXd D = (U.adjoint() * G).real();
    out.D0 = 0.5 * (D + D.transpose());
    out.flagged = false;
    return out;
}

//---------------------------------------------------------------------------//
struct GapBound
{
    double delta = 0.0;  // delta_lambda
    double coeff = 0.0;  // c with delta_lambda ~ c lambda^2 as lambda -> 0
};

/// delta_lambda = (1/T) lambda^2 chi^2 / [(2 + gamma + 2T|h|_inf + 4T lambda)^2 + lambda^2 chi^2].
inline GapBound gap_delta_lambda(double lambda, double rate, double h_sup)
{
    const MarkovConstants mc = MarkovConstants::flip(rate);
    const double T = mc.gap_T, g = mc.sector_gamma, chi = mc.nondeg_chi;
    const double a = 2.0 + g + 2.0 * T * h_sup;
    GapBound out;
    const double den = std::pow(a + 4.0 * T * lambda, 2) + lambda * lambda * chi * chi;
    out.delta = lambda * lambda * chi * chi / (T * den);
    out.coeff = chi * chi / (T * a * a);
    return out;
}

inline GapBound gap_delta_lambda(double lambda, double rate, HoppingKernel const& h)
{
    return gap_delta_lambda(lambda, rate, hopping_norm(h));
}

/// Eigen-residual accepted when locating spectrum in the gap sweep.
inline constexpr double kGapScanResidual = 1e-7;

struct GapScan
{
    std::vector<cplx> eigenvalues;  // detected, Re z < low_re_limit, deduplicated
    double gap_observed = INFINITY; // smallest Re over the nonzero detected spectrum
    int zero_count = 0;
    double sweep_halfwidth = 0.0;
    double low_re_limit = 0.0;
    int shifts = 0;
    bool covered = false;           // the shift disks cover [0, gap] x [-W, W]
    bool converged = false;
    double max_abs_im = 0.0;        // over detected eigenvalues
    std::vector<std::string> warnings;
};

/*!
 * Shift-invert Arnoldi at shifts -eps + i y along the imaginary axis. Every
 * eigenvalue of L_0 has |Im z| <= |K_0| + lambda |V| <= 2|h|_1 + 2 lambda, so
 * the sweep covers the full strip. Each shift keeps adding eigenvalues until
 * its disk contains the rectangle slice [0, gap] x [y - dy/2, y + dy/2].
 */
inline GapScan gap_scan(SparseOperator const& L0, double lambda, HoppingKernel const& h, double rate,
                        SpectralOptions const& opt = {}, double dy = 0.5)
{
    GapScan out;
    out.sweep_halfwidth = 2.0 * h.l1() + 2.0 * lambda;
    out.low_re_limit = 2.0 * rate;  // 1/T
    const double eps = 0.05;
    const double zero_tol = 1e-8;
    const int m = int(std::ceil(2.0 * out.sweep_halfwidth / dy));
    const double step = 2.0 * out.sweep_halfwidth / m;
    std::vector<cplx> all;
    double gmin = INFINITY;
    auto need = [&] { return std::hypot((std::isfinite(gmin) ? gmin : 0.5) + eps, 0.5 * step); };
    std::vector<double> radius(std::size_t(m + 1), 0.0);
    auto shift_of = [&](int s) { return cplx(-eps, -out.sweep_halfwidth + s * step); };
    auto run_shift = [&](int s) {
        const cplx sigma = shift_of(s);
        ArnoldiResult ar;
        for (int nev = 16;; nev *= 2) {
            const double goal = need();
            ar = nearest_eigenvalues(L0.matrix, sigma, nev, opt.residual_tol, 0, 60, {}, goal, kGapScanResidual);
            if (ar.radius >= goal || nev >= 256 || nev >= int(L0.matrix.rows()) - 2) break;
        }
        if (!ar.converged) {
            out.converged = false;
            out.warnings.push_back("Arnoldi did not converge at shift " + std::to_string(sigma.imag()) + "i");
        }
        for (auto const& p : ar.pairs) {
            if (p.residual > kGapScanResidual * std::max(1.0, std::abs(p.value))) {
                out.converged = false;
                continue;
            }
            bool dup = false;
            for (auto const& z : all)
                if (std::abs(z - p.value) < 1e-7) dup = true;
            if (dup) continue;
            all.push_back(p.value);
            if (std::abs(p.value) > zero_tol) gmin = std::min(gmin, p.value.real());
        }
        radius[std::size_t(s)] = ar.radius;
    };
    // start at the shift nearest the origin, where the smallest Re sits, then sweep outwards
    std::vector<int> order(static_cast<std::size_t>(m + 1));
    for (int s = 0; s <= m; ++s) order[std::size_t(s)] = s;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(shift_of(a)) < std::abs(shift_of(b)); });
    out.converged = true;
    for (int s : order) run_shift(s);
    for (int s : order)
        if (radius[std::size_t(s)] < need()) run_shift(s);
    std::vector<std::pair<cplx, double>> disks;
    for (int s = 0; s <= m; ++s) disks.emplace_back(shift_of(s), radius[std::size_t(s)]);
    out.shifts = int(disks.size());
    for (auto const& z : all) {
        if (std::abs(z) <= zero_tol) {
            ++out.zero_count;
            continue;
        }
        out.gap_observed = std::min(out.gap_observed, z.real());
    }
    for (auto const& z : all)
        if (z.real() < out.low_re_limit) {
            out.eigenvalues.push_back(z);
            out.max_abs_im = std::max(out.max_abs_im, std::abs(z.imag()));
        }
    std::sort(out.eigenvalues.begin(), out.eigenvalues.end(),
              [](cplx a, cplx b) { return a.real() < b.real() || (a.real() == b.real() && a.imag() < b.imag()); });
    out.covered = std::all_of(disks.begin(), disks.end(), [&](auto const& d) { return d.second >= need(); });
    if (!out.covered) out.warnings.push_back("shift disks do not cover the low-Re strip");
    if (out.zero_count != 1) out.warnings.push_back("zero eigenvalue found " + std::to_string(out.zero_count) + " times");
    return out;
}

struct GapCheck
{
    GapScan base, doubled;
    Truncation trunc, trunc_doubled;
    double delta_lambda = 0.0;
    double tol_trunc = 0.0;       // |gap(doubled) - gap(base)|
    double drift = 0.0;           // tol_trunc / gap(base)
    double wedge_bound = 0.0;     // |h|_inf + 2 lambda + gamma Re z with gamma = 0
    bool wedge_ok = false;
    bool zero_simple = false;
    bool above_bound = false;     // gap >= delta_lambda - tol_trunc
    bool pass = false;
    std::vector<std::string> warnings;
};

inline Truncation doubled(Truncation t)
{
    t.pos_radius *= 2;
    t.set_radius *= 2;
    return t;
}

/// Gap of L_0 against delta_lambda, with a truncation-doubling comparison (R_x and R_A doubled).
inline GapCheck spectral_gap_check(Truncation const& trunc, int dim, double lambda, double rate, HoppingKernel const& h,
                                   SpectralOptions const& opt = {})
{
    GapCheck out;
    out.trunc = trunc;
    out.trunc_doubled = doubled(trunc);
    const double hs = hopping_norm(h);
    out.delta_lambda = gap_delta_lambda(lambda, rate, hs).delta;
    out.wedge_bound = hs + 2.0 * lambda;
    for (Truncation const* t : {&out.trunc, &out.trunc_doubled}) {
        if (estimate_dimension(*t, dim) > 2e4) {
            out.warnings.push_back("truncation dimension above 2e4; gap sweep refused");
            return out;
        }
    }
    CharacterBasis b1(out.trunc, dim), b2(out.trunc_doubled, dim);
    out.base = gap_scan(build_L(b1, KVector{}, lambda, rate, h), lambda, h, rate, opt);
    out.doubled = gap_scan(build_L(b2, KVector{}, lambda, rate, h), lambda, h, rate, opt);
    out.tol_trunc = std::abs(out.doubled.gap_observed - out.base.gap_observed);
    out.drift = out.tol_trunc / out.base.gap_observed;
    out.wedge_ok = out.base.max_abs_im <= out.wedge_bound + 1e-9 && out.doubled.max_abs_im <= out.wedge_bound + 1e-9;
    out.zero_simple = out.base.zero_count == 1 && out.doubled.zero_count == 1;
    out.above_bound = out.base.gap_observed >= out.delta_lambda - out.tol_trunc;
    for (auto* s : {&out.base, &out.doubled})
        for (auto const& w : s->warnings) out.warnings.push_back(w);
    out.pass = out.above_bound && out.wedge_ok && out.zero_simple && out.base.covered && out.doubled.covered
               && out.base.converged && out.doubled.converged;
    return out;
}

} // namespace flipdiff
