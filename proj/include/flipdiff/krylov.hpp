// SPDX-License-Identifier: Apache-2.0
//
// Restarted GMRES and shift-invert Arnoldi for complex sparse matrices.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lattice.hpp"

namespace flipdiff {

using SparseMatrix = Eigen::SparseMatrix<cplx>;
using Vector = Eigen::VectorXcd;
using LinearMap = std::function<Vector(Vector const&)>;

struct GmresResult
{
    Vector x;
    double residual = 0.0;  // |b - A x| / |b|
    int iterations = 0;
    bool converged = false;
};

/*!
 * Right-preconditioned restarted GMRES: solves A x = b with M^{-1} given by
 * the diagonal `precond_inv`. The residual reported is the true relative one.
 */
inline GmresResult gmres(LinearMap const& A, Vector const& precond_inv, Vector const& b, double tol = 1e-12,
                         int restart = 80, int max_iter = 4000)
{
    const Eigen::Index n = b.size();
    GmresResult out;
    out.x = Vector::Zero(n);
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        out.converged = true;
        return out;
    }
    Vector r = b;
    while (out.iterations < max_iter) {
        const double beta = r.norm();
        if (beta / bnorm <= tol) break;
        const int m = restart;
        Eigen::MatrixXcd V(n, m + 1);
        Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(m + 1, m);
        std::vector<Eigen::JacobiRotation<cplx>> rot(static_cast<std::size_t>(m));
        Vector g = Vector::Zero(m + 1);
        g(0) = beta;
        V.col(0) = r / beta;
        int j = 0;
        for (; j < m && out.iterations < max_iter; ++j, ++out.iterations) {
            Vector w = A(precond_inv.cwiseProduct(V.col(j)));
            for (int i = 0; i <= j; ++i) {  // modified Gram-Schmidt, twice
                cplx hij = V.col(i).dot(w);
                H(i, j) = hij;
                w -= hij * V.col(i);
            }
            for (int i = 0; i <= j; ++i) {
                cplx c = V.col(i).dot(w);
                H(i, j) += c;
                w -= c * V.col(i);
            }
            H(j + 1, j) = w.norm();
            if (std::abs(H(j + 1, j)) > 0.0) V.col(j + 1) = w / H(j + 1, j);
            for (int i = 0; i < j; ++i) {
                cplx a = H(i, j), c = H(i + 1, j);
                H(i, j) = std::conj(rot[std::size_t(i)].c()) * a - std::conj(rot[std::size_t(i)].s()) * c;
                H(i + 1, j) = rot[std::size_t(i)].s() * a + rot[std::size_t(i)].c() * c;
            }
            rot[std::size_t(j)].makeGivens(H(j, j), H(j + 1, j));
            {
                cplx a = H(j, j), c = H(j + 1, j);
                auto const& G = rot[std::size_t(j)];
                H(j, j) = std::conj(G.c()) * a - std::conj(G.s()) * c;
                H(j + 1, j) = 0.0;
                cplx g0 = g(j), g1 = g(j + 1);
                g(j) = std::conj(G.c()) * g0 - std::conj(G.s()) * g1;
                g(j + 1) = G.s() * g0 + G.c() * g1;
            }
            if (std::abs(g(j + 1)) / bnorm <= tol * 0.5 || std::abs(H(j, j)) == 0.0) {
                ++j;
                ++out.iterations;
                break;
            }
        }
        Vector y = H.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
        out.x += precond_inv.cwiseProduct(V.leftCols(j) * y);
        r = b - A(out.x);
    }
    out.residual = (b - A(out.x)).norm() / bnorm;
    out.converged = out.residual <= tol;
    return out;
}

struct EigenPair
{
    cplx value;
    Vector vector;      // unit norm
    double residual;    // |L v - value v|
};

struct ArnoldiResult
{
    std::vector<EigenPair> pairs;  // sorted by distance to the shift
    double radius = 0.0;           // distance from the shift to the farthest accepted eigenvalue
    int cycles = 0;
    bool converged = false;
    bool empty_disk = false;       // no eigenvalue within radius_goal
};

/// LU factorisation of L - sigma, reused across solves.
class ShiftInvert
{
  public:
    ShiftInvert(SparseMatrix const& L, cplx sigma) : sigma_(sigma)
    {
        SparseMatrix S = L;
        for (Eigen::Index i = 0; i < S.rows(); ++i) S.coeffRef(i, i) -= sigma;
        S.makeCompressed();
        lu_.analyzePattern(S);
        lu_.factorize(S);
        ok_ = lu_.info() == Eigen::Success;
    }
    bool ok() const { return ok_; }
    cplx sigma() const { return sigma_; }
    Vector solve(Vector const& v) { return lu_.solve(v); }

  private:
    cplx sigma_;
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
    bool ok_ = false;
};

namespace detail {
/// Swap the adjacent diagonal entries k, k+1 of the upper-triangular T,
/// updating the Schur vectors Q (T = Q^* H Q).
inline void schur_swap(Eigen::MatrixXcd& T, Eigen::MatrixXcd& Q, Eigen::Index k)
{
    const cplx a = T(k, k), b = T(k + 1, k + 1);
    Eigen::JacobiRotation<cplx> G;
    G.makeGivens(T(k, k + 1), b - a);
    T.applyOnTheLeft(k, k + 1, G.adjoint());
    T.applyOnTheRight(k, k + 1, G);
    Q.applyOnTheRight(k, k + 1, G);
    T(k + 1, k) = 0.0;
    T(k, k) = b;
    T(k + 1, k + 1) = a;
}

/// Eigenvector of upper-triangular T for the diagonal entry i.
inline Vector triangular_eigvec(Eigen::MatrixXcd const& T, Eigen::Index i)
{
    Vector x = Vector::Zero(T.rows());
    x(i) = 1.0;
    const cplx mu = T(i, i);
    const double small = 1e-14 * std::max(1.0, T.cwiseAbs().maxCoeff());
    for (Eigen::Index j = i - 1; j >= 0; --j) {
        cplx s = 0.0;
        for (Eigen::Index l = j + 1; l <= i; ++l) s += T(j, l) * x(l);
        cplx d = T(j, j) - mu;
        if (std::abs(d) < small) d = small;
        x(j) = -s / d;
    }
    return x;
}
} // namespace detail

/*!
 * The `nev` eigenvalues of L nearest `sigma`: Krylov-Schur iteration on
 * (L - sigma)^{-1}. An optional projector applied after each inverse removes
 * already-known eigenvectors (deflation). With radius_goal > 0 the iteration
 * stops as soon as the leading pairs, converged to `goal_tol`, reach that
 * distance from the shift, and only those pairs are returned.
 */
inline ArnoldiResult nearest_eigenvalues(SparseMatrix const& L, cplx sigma, int nev, double tol = 1e-10,
                                         int ncv = 0, int max_cycles = 60,
                                         std::function<void(Vector&)> const& project = {},
                                         double radius_goal = 0.0, double goal_tol = 1e-7)
{
    const Eigen::Index n = L.rows();
    if (ncv <= 0) ncv = std::max(2 * nev + 20, 40);
    ncv = int(std::min<Eigen::Index>(ncv, n));
    nev = std::max(1, std::min(nev, ncv - 2));
    ShiftInvert si(L, sigma);
    if (!si.ok()) throw std::runtime_error("shift-invert factorisation failed (shift on an eigenvalue?)");
    const int m = ncv;
    Eigen::MatrixXcd V(n, m + 1);
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(m + 1, m);
    {
        Vector start(n);
        for (Eigen::Index i = 0; i < n; ++i)
            start(i) = cplx(1.0 + 0.1 * std::sin(1.7 * double(i)), 0.3 * std::cos(0.9 * double(i)));
        if (project) project(start);
        V.col(0) = start / start.norm();
    }
    ArnoldiResult out;
    int k = 0;
    int m_eff = m;
    Eigen::MatrixXcd T, Q;
    int settled = 0;
    for (out.cycles = 1; out.cycles <= max_cycles; ++out.cycles) {
        m_eff = m;
        for (int j = k; j < m; ++j) {
            Vector w = si.solve(V.col(j));
            if (project) project(w);
            for (int pass = 0; pass < 2; ++pass) {
                Vector h = V.leftCols(j + 1).adjoint() * w;
                w -= V.leftCols(j + 1) * h;
                H.col(j).head(j + 1) += h;
            }
            H(j + 1, j) = w.norm();
            if (std::abs(H(j + 1, j)) < 1e-13 * H.col(j).head(j + 1).norm()) {
                H(j + 1, j) = 0.0;
                m_eff = j + 1;
                break;
            }
            V.col(j + 1) = w / H(j + 1, j);
        }
        Eigen::ComplexSchur<Eigen::MatrixXcd> cs(H.topLeftCorner(m_eff, m_eff));
        T = cs.matrixT();
        Q = cs.matrixU();
        // bubble the largest |theta| to the front
        for (Eigen::Index i = 0; i < m_eff; ++i) {
            Eigen::Index best = i;
            for (Eigen::Index j = i + 1; j < m_eff; ++j)
                if (std::abs(T(j, j)) > std::abs(T(best, best))) best = j;
            for (Eigen::Index j = best; j > i; --j) detail::schur_swap(T, Q, j - 1);
        }
        const double beta = std::abs(H(m_eff, m_eff - 1));
        int conv = 0, loose = 0;
        for (int i = 0; i < std::min(nev, m_eff); ++i) {
            Vector x = detail::triangular_eigvec(T, i);
            Vector s = Q * x;
            const double est = beta * std::abs(s(m_eff - 1)) / s.norm();
            if (est <= 0.1 * goal_tol * std::abs(T(i, i)) && loose == i) ++loose;
            if (est > 0.1 * tol * std::abs(T(i, i))) {
                if (radius_goal <= 0.0) break;
                continue;
            }
            if (conv == i) ++conv;
        }
        settled = loose;
        if (radius_goal > 0.0 && loose > 0 && 1.0 / std::abs(T(loose - 1, loose - 1)) >= radius_goal) {
            nev = loose;
            out.converged = true;
            break;
        }
        // after two restarts the largest unsettled Ritz value is still far below
        // 1/goal: the settled pairs are all the eigenvalues inside the disk
        if (radius_goal > 0.0 && out.cycles >= 3 && loose < m_eff && std::abs(T(loose, loose)) * radius_goal < 0.5) {
            nev = loose;
            out.converged = true;
            out.empty_disk = true;
            break;
        }
        if (conv >= std::min(nev, m_eff) || m_eff < m) {
            out.converged = true;
            break;
        }
        if (out.cycles == max_cycles) break;
        const int p = std::min(m - 2, std::max(nev + 1, (nev + m) / 2));
        Eigen::MatrixXcd Vp = V.leftCols(m) * Q.leftCols(p);
        V.leftCols(p) = Vp;
        V.col(p) = V.col(m);
        Eigen::MatrixXcd Hn = Eigen::MatrixXcd::Zero(m + 1, m);
        Hn.topLeftCorner(p, p) = T.topLeftCorner(p, p);
        Hn.row(p).head(p) = H(m, m - 1) * Q.row(m - 1).head(p);
        H = Hn;
        k = p;
    }
    const int want = radius_goal > 0.0 ? settled : std::min(nev, m_eff);
    for (int i = 0; i < want; ++i) {
        const cplx theta = T(i, i);
        if (std::abs(theta) == 0.0) continue;
        Vector v = V.leftCols(m_eff) * (Q * detail::triangular_eigvec(T, i));
        v /= v.norm();
        const cplx lam = sigma + 1.0 / theta;
        out.pairs.push_back({lam, v, (L * v - lam * v).norm()});
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [&](EigenPair const& a, EigenPair const& b) { return std::abs(a.value - sigma) < std::abs(b.value - sigma); });
    for (auto const& p : out.pairs) out.radius = std::max(out.radius, std::abs(p.value - sigma));
    if (out.empty_disk) out.radius = std::max(out.radius, radius_goal);
    return out;
}

} // namespace flipdiff
