// SPDX-License-Identifier: Apache-2.0
//
// Fibered augmented-space operators in the character basis, and dense
// oracles on small periodic windows with the full spin space.
//
//   B    (x,A) -> 2r|A| (x,A)
//   V    (x,A) -> (x, A(+){x}) - (x, A(+){0})            (x != 0)
//   K_k  (x,A) -> sum_z h(z) [(x+z, A) - e^{-ik.z} (x+z, A+z)]
//   L_k = i K_k + i lambda V + B
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "character_basis.hpp"
#include "flip_process.hpp"
#include "krylov.hpp"
#include "lattice.hpp"

namespace flipdiff {

enum class OperatorKind { B, V, K, L, dK };

inline char const* to_string(OperatorKind k)
{
    switch (k) {
    case OperatorKind::B: return "B";
    case OperatorKind::V: return "V";
    case OperatorKind::K: return "K_k";
    case OperatorKind::L: return "L_k";
    case OperatorKind::dK: return "dK_k";
    }
    return "?";
}

struct SparseOperator
{
    SparseMatrix matrix;
    OperatorKind kind = OperatorKind::L;
    KVector k{};
    int axis = -1;            // derivative axis for dK
    Truncation trunc;
    std::size_t clipped = 0;  // image entries that fell outside the basis

    Eigen::Index dimension() const { return matrix.rows(); }
};

namespace detail {
struct TripletBuilder
{
    CharacterBasis const& basis;
    std::vector<Eigen::Triplet<cplx>> trip;
    std::size_t clipped = 0;

    void add(Coord x, std::vector<Coord> A, std::size_t col, cplx v)
    {
        long row = basis.find(x, std::move(A));
        if (row < 0) {
            ++clipped;
            return;
        }
        trip.emplace_back(int(row), int(col), v);
    }

    SparseOperator finish(OperatorKind kind, KVector k = {}, int axis = -1)
    {
        SparseOperator op;
        const auto n = Eigen::Index(basis.size());
        op.matrix.resize(n, n);
        op.matrix.setFromTriplets(trip.begin(), trip.end());
        op.matrix.prune(cplx(0.0));
        op.matrix.makeCompressed();
        op.kind = kind;
        op.k = k;
        op.axis = axis;
        op.trunc = basis.truncation();
        op.clipped = clipped;
        return op;
    }
};

inline std::vector<Coord> translate(std::vector<Coord> A, Coord const& z)
{
    for (auto& a : A) a = a + z;
    return A;
}

inline bool is_origin(CharacterBasis const& b, Coord x)
{
    std::vector<Coord> none;
    b.canonicalize(x, none);
    return x == Coord{};
}
} // namespace detail

inline SparseOperator build_B(CharacterBasis const& basis, double rate)
{
    detail::TripletBuilder tb{basis, {}};
    for (std::size_t j = 0; j < basis.size(); ++j)
        tb.trip.emplace_back(int(j), int(j), 2.0 * rate * double(basis[j].A.size()));
    return tb.finish(OperatorKind::B);
}

inline SparseOperator build_V(CharacterBasis const& basis)
{
    detail::TripletBuilder tb{basis, {}};
    for (std::size_t j = 0; j < basis.size(); ++j) {
        auto const& e = basis[j];
        if (detail::is_origin(basis, e.x)) continue;
        tb.add(e.x, CharacterBasis::toggle(e.A, e.x), j, 1.0);
        tb.add(e.x, CharacterBasis::toggle(e.A, Coord{}), j, -1.0);
    }
    return tb.finish(OperatorKind::V);
}

inline SparseOperator build_K(CharacterBasis const& basis, KVector const& k, HoppingKernel const& h)
{
    detail::TripletBuilder tb{basis, {}};
    for (std::size_t j = 0; j < basis.size(); ++j) {
        auto const& e = basis[j];
        for (auto const& t : h.terms) {
            tb.add(e.x + t.disp, e.A, j, t.amp);
            tb.add(e.x + t.disp, detail::translate(e.A, t.disp), j,
                   -std::polar(1.0, -dot(k, t.disp, basis.dim())) * t.amp);
        }
    }
    return tb.finish(OperatorKind::K, k);
}

/// d/dk_axis of K_k.
inline SparseOperator build_dK(CharacterBasis const& basis, KVector const& k, HoppingKernel const& h, int axis)
{
    detail::TripletBuilder tb{basis, {}};
    for (std::size_t j = 0; j < basis.size(); ++j) {
        auto const& e = basis[j];
        for (auto const& t : h.terms) {
            if (t.disp[axis] == 0) continue;
            tb.add(e.x + t.disp, detail::translate(e.A, t.disp), j,
                   cplx(0.0, double(t.disp[axis])) * std::polar(1.0, -dot(k, t.disp, basis.dim())) * t.amp);
        }
    }
    return tb.finish(OperatorKind::dK, k, axis);
}

inline SparseOperator build_L(CharacterBasis const& basis, KVector const& k, double lambda, double rate,
                              HoppingKernel const& h)
{
    const cplx I(0.0, 1.0);
    SparseOperator K = build_K(basis, k, h);
    SparseOperator V = build_V(basis);
    SparseOperator B = build_B(basis, rate);
    SparseOperator L;
    L.matrix = (I * K.matrix + (I * lambda) * V.matrix + B.matrix).pruned(cplx(0.0));
    L.matrix.makeCompressed();
    L.kind = OperatorKind::L;
    L.k = k;
    L.trunc = basis.truncation();
    L.clipped = K.clipped + V.clipped;
    return L;
}

/// Coordinate-list text export:
///   flipdiff-coo 1
///   kind <B|V|K_k|L_k|dK_k>
///   k <k_1> ... <k_d>
///   truncation <R_x> <A_max> <R_A>
///   dimension <n> nnz <m> clipped <c>
///   <row> <col> <re> <im>     (0-based, column-major order)
/// followed by one line per basis element: "basis <index> <x...> | <a_1...> ..."
inline void write_coo(std::ostream& os, SparseOperator const& op, CharacterBasis const& basis)
{
    char buf[96];
    os << "flipdiff-coo 1\nkind " << to_string(op.kind) << "\nk";
    for (int i = 0; i < basis.dim(); ++i) {
        std::snprintf(buf, sizeof buf, " %.17g", op.k[i]);
        os << buf;
    }
    os << "\ntruncation " << op.trunc.pos_radius << " " << op.trunc.set_size << " " << op.trunc.set_radius << "\n";
    os << "dimension " << op.matrix.rows() << " nnz " << op.matrix.nonZeros() << " clipped " << op.clipped << "\n";
    for (int c = 0; c < op.matrix.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(op.matrix, c); it; ++it) {
            std::snprintf(buf, sizeof buf, "%ld %ld %.17g %.17g\n", long(it.row()), long(it.col()),
                          it.value().real(), it.value().imag());
            os << buf;
        }
    for (std::size_t i = 0; i < basis.size(); ++i) {
        os << "basis " << i;
        for (int d = 0; d < basis.dim(); ++d) os << " " << basis[i].x[d];
        os << " |";
        for (auto const& a : basis[i].A)
            for (int d = 0; d < basis.dim(); ++d) os << " " << a[d];
        os << "\n";
    }
}

//---------------------------------------------------------------------------//
// Dense oracles on Z_L (d = 1) with the full spin space {-1,1}^L. Spin
// configurations are bit masks (bit y set <=> w(y) = -1), as in flip_process.

inline constexpr std::size_t kMaxFiberDim = 2048;
inline constexpr std::size_t kMaxTwoSidedDim = 4096;

namespace detail {
inline void check_dense(int L, std::size_t dim, std::size_t limit, char const* what)
{
    if (L < 1 || L > kMaxDenseSpins || dim > limit) {
        const double bytes = double(dim) * double(dim) * 16.0;
        throw std::length_error(std::string(what) + " on L=" + std::to_string(L) + " has dimension "
                                + std::to_string(dim) + " (limit " + std::to_string(limit) + "), a dense matrix of "
                                + std::to_string(bytes / 1e9) + " GB");
    }
}

/// (sigma_z w)(y) = w(y + z).
inline std::uint32_t shift_config(std::uint32_t w, int z, int L)
{
    std::uint32_t v = 0;
    for (int y = 0; y < L; ++y)
        if ((w >> ((((y + z) % L) + L) % L)) & 1u) v |= 1u << y;
    return v;
}
} // namespace detail

inline std::size_t fiber_dimension(int L) { return std::size_t(L) << std::min(L, 40); }

/// L_k on l^2(Z_L) (x) C^{2^L}, index w*L + x, from the defining formulas.
inline Eigen::MatrixXcd fiber_operator_dense(int L, HoppingKernel const& h, double k, double lambda, double rate)
{
    const std::size_t dim = fiber_dimension(L);
    detail::check_dense(L, dim, kMaxFiberDim, "dense fiber operator");
    const std::uint32_t S = 1u << L;
    const cplx I(0.0, 1.0);
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(Eigen::Index(dim), Eigen::Index(dim));
    auto idx = [L](std::uint32_t w, int x) { return Eigen::Index(w) * L + (((x % L) + L) % L); };
    for (std::uint32_t w = 0; w < S; ++w)
        for (int x = 0; x < L; ++x) {
            const Eigen::Index j = idx(w, x);
            for (auto const& t : h.terms) {
                const int z = t.disp[0];
                M(idx(w, x + z), j) += I * t.amp;
                M(idx(detail::shift_config(w, -z, L), x + z), j) -= I * std::polar(1.0, -k * z) * t.amp;
            }
            M(j, j) += I * lambda * double(spin_of(w, x) - spin_of(w, 0)) + rate * L;
            for (int y = 0; y < L; ++y) M(idx(w ^ (1u << y), x), j) -= rate;
        }
    return M;
}

/// Two-sided generator on l^2(Z_L x Z_L) (x) C^{2^L}, index (w*L + x)*L + y:
/// (L Psi)(x,y,w) = i sum_z h(z)[Psi(x-z,y,w) - Psi(x,y+z,w)] + i lambda (w(x)-w(y)) Psi + (B Psi)(w).
inline Eigen::MatrixXcd two_sided_operator_dense(int L, HoppingKernel const& h, double lambda, double rate)
{
    const std::size_t dim = std::size_t(L) * std::size_t(L) << L;
    detail::check_dense(L, dim, kMaxTwoSidedDim, "dense two-sided operator");
    const std::uint32_t S = 1u << L;
    const cplx I(0.0, 1.0);
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(Eigen::Index(dim), Eigen::Index(dim));
    auto wrap = [L](int c) { return ((c % L) + L) % L; };
    auto idx = [&](std::uint32_t w, int x, int y) { return (Eigen::Index(w) * L + wrap(x)) * L + wrap(y); };
    for (std::uint32_t w = 0; w < S; ++w)
        for (int x = 0; x < L; ++x)
            for (int y = 0; y < L; ++y) {
                const Eigen::Index j = idx(w, x, y);
                for (auto const& t : h.terms) {
                    const int z = t.disp[0];
                    M(idx(w, x + z, y), j) += I * t.amp;                // Psi(x'-z, y') with x' = x+z
                    M(idx(w, x, y - z), j) -= I * t.amp;                // Psi(x', y'+z) with y' = y-z
                }
                M(j, j) += I * lambda * double(spin_of(w, x) - spin_of(w, y)) + rate * L;
                for (int q = 0; q < L; ++q) M(idx(w ^ (1u << q), x, y), j) -= rate;
            }
    return M;
}

/// rho^_{0;k}(x) = sum_y e^{-ik y} rho0(x-y, -y) on Z_L.
inline Eigen::VectorXcd rho_hat(Eigen::MatrixXcd const& rho0, double k)
{
    const int L = int(rho0.rows());
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(L);
    for (int x = 0; x < L; ++x)
        for (int y = 0; y < L; ++y) out(x) += std::polar(1.0, -k * y) * rho0(((x - y) % L + L) % L, (L - y) % L);
    return out;
}

/// <delta_0 (x) 1, e^{-tL_k} rho^_{0;k} (x) 1> by a dense exponential of the fiber operator.
inline cplx fiber_pairing(int L, HoppingKernel const& h, double lambda, double rate, Eigen::MatrixXcd const& rho0,
                          double k, double t)
{
    const std::uint32_t S = 1u << L;
    Eigen::MatrixXcd E = (-t * fiber_operator_dense(L, h, k, lambda, rate)).exp();
    Eigen::VectorXcd rh = rho_hat(rho0, k);
    Eigen::VectorXcd v0(Eigen::Index(S) * L);
    for (std::uint32_t w = 0; w < S; ++w) v0.segment(Eigen::Index(w) * L, L) = rh;
    Eigen::VectorXcd vt = E * v0;
    cplx s = 0.0;
    for (std::uint32_t w = 0; w < S; ++w) s += vt(Eigen::Index(w) * L);
    return s / double(S);
}

/// E rho_t(x, x) on Z_L from the fibered Pillet formula, inverting
/// <delta_0 (x) 1, e^{-tL_k} rho^ (x) 1> = sum_x e^{+ik x} E rho_t(x,x) over the dual grid.
inline Eigen::VectorXd pillet_oracle(int L, HoppingKernel const& h, double lambda, double rate,
                                     Eigen::MatrixXcd const& rho0, double t)
{
    if (rho0.rows() != L || rho0.cols() != L) throw std::invalid_argument("rho0 must be L x L");
    detail::check_dense(L, fiber_dimension(L), kMaxFiberDim, "Pillet oracle");
    std::vector<cplx> pair(static_cast<std::size_t>(L));
    for (int m = 0; m < L; ++m) pair[std::size_t(m)] = fiber_pairing(L, h, lambda, rate, rho0, 2.0 * std::numbers::pi * m / L, t);
    Eigen::VectorXd out(L);
    for (int x = 0; x < L; ++x) {
        cplx s = 0.0;
        for (int m = 0; m < L; ++m) s += std::polar(1.0, -2.0 * std::numbers::pi * m * x / L) * pair[std::size_t(m)];
        out(x) = (s / double(L)).real();
    }
    return out;
}

/// E rho_t(x, y) from the two-sided generator: average over w of e^{-tL}(rho0 (x) 1).
inline Eigen::MatrixXcd two_sided_density(int L, HoppingKernel const& h, double lambda, double rate,
                                          Eigen::MatrixXcd const& rho0, double t)
{
    const std::uint32_t S = 1u << L;
    Eigen::MatrixXcd E = (-t * two_sided_operator_dense(L, h, lambda, rate)).exp();
    Eigen::VectorXcd v0(Eigen::Index(S) * L * L);
    for (std::uint32_t w = 0; w < S; ++w)
        for (int x = 0; x < L; ++x)
            for (int y = 0; y < L; ++y) v0((Eigen::Index(w) * L + x) * L + y) = rho0(x, y);
    Eigen::VectorXcd vt = E * v0;
    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(L, L);
    for (std::uint32_t w = 0; w < S; ++w)
        for (int x = 0; x < L; ++x)
            for (int y = 0; y < L; ++y) out(x, y) += vt((Eigen::Index(w) * L + x) * L + y);
    return out / double(S);
}

struct FiberConsistency
{
    std::vector<double> ks;
    std::vector<cplx> two_sided;  // sum_x e^{ik x} E rho_t(x,x) from the two-sided generator
    std::vector<cplx> fibered;    // <delta_0 (x) 1, e^{-tL_k} rho^ (x) 1>
    double max_diff = 0.0;
};

inline FiberConsistency fiber_consistency(int L, HoppingKernel const& h, double lambda, double rate,
                                          Eigen::MatrixXcd const& rho0, double t)
{
    FiberConsistency rep;
    Eigen::MatrixXcd rho_t = two_sided_density(L, h, lambda, rate, rho0, t);
    for (int m = 0; m < L; ++m) {
        const double k = 2.0 * std::numbers::pi * m / L;
        cplx lhs = 0.0;
        for (int x = 0; x < L; ++x) lhs += std::polar(1.0, k * x) * rho_t(x, x);
        cplx rhs = fiber_pairing(L, h, lambda, rate, rho0, k, t);
        rep.ks.push_back(k);
        rep.two_sided.push_back(lhs);
        rep.fibered.push_back(rhs);
        rep.max_diff = std::max(rep.max_diff, std::abs(lhs - rhs));
    }
    return rep;
}

/// Isometry from a periodic character basis into the dense fiber space:
/// column (x, A) is delta_x (x) e_A / 2^{L/2}.
inline Eigen::MatrixXcd character_embedding(CharacterBasis const& basis)
{
    if (!basis.periodic() || basis.dim() != 1) throw std::invalid_argument("embedding needs a periodic d=1 basis");
    const int L = basis.periodic()->side;
    const std::uint32_t S = 1u << L;
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Zero(Eigen::Index(S) * L, Eigen::Index(basis.size()));
    const double norm = 1.0 / std::sqrt(double(S));
    for (std::size_t j = 0; j < basis.size(); ++j) {
        std::vector<int> sub;
        for (auto const& a : basis[j].A) sub.push_back(a[0]);
        Eigen::VectorXd chi = character_dense(L, sub);
        for (std::uint32_t w = 0; w < S; ++w) U(Eigen::Index(w) * L + basis[j].x[0], Eigen::Index(j)) = chi(w) * norm;
    }
    return U;
}

} // namespace flipdiff
