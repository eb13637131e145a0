// SPDX-License-Identifier: Apache-2.0
//
// Orthonormal basis delta_x (x) e_A of the fibered augmented space, with
// e_A(w) = prod_{a in A} w(a). Either a truncation of Z^d or, for dense
// comparisons, a full periodic window.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lattice.hpp"

namespace flipdiff {

struct Truncation
{
    int pos_radius = 12;  // |x|_inf <= R_x
    int set_size = 2;     // |A| <= A_max
    int set_radius = 2;   // every a in A within R_A (inf-norm) of 0 or of x

    void validate() const
    {
        if (pos_radius < 0 || set_size < 0 || set_radius < 0)
            throw std::invalid_argument("truncation parameters must be nonnegative");
    }
    bool operator==(Truncation const&) const = default;
};

struct BasisElement
{
    Coord x{};
    std::vector<Coord> A;  // sorted, duplicate-free

    bool operator==(BasisElement const&) const = default;
};

inline constexpr double kMaxBasisDimension = 2e6;

namespace detail {
inline double binomial_sum(double n, int kmax)
{
    double total = 0.0, c = 1.0;
    for (int k = 0; k <= kmax && k <= n; ++k) {
        total += c;
        c = c * (n - k) / (k + 1);
    }
    return total;
}

struct KeyHash
{
    std::size_t operator()(std::vector<int> const& v) const
    {
        std::size_t h = 0x9E3779B97F4A7C15ull;
        for (int c : v) h = (h ^ std::size_t(std::uint32_t(c))) * 0x100000001B3ull;
        return h;
    }
};
} // namespace detail

/// Basis size for a truncation of Z^d, without building it.
inline double estimate_dimension(Truncation const& t, int dim)
{
    check_dim(dim);
    const int side = 2 * t.set_radius + 1;
    double total = 0.0;
    Coord x{};
    const int w = 2 * t.pos_radius + 1;
    long count = 1;
    for (int i = 0; i < dim; ++i) count *= w;
    for (long idx = 0; idx < count; ++idx) {
        long rem = idx;
        double overlap = 1.0, box = 1.0;
        for (int i = 0; i < dim; ++i) {
            x[i] = int(rem % w) - t.pos_radius;
            rem /= w;
            overlap *= std::max(0, side - std::abs(x[i]));
            box *= side;
        }
        total += detail::binomial_sum(2.0 * box - overlap, t.set_size);
    }
    return total;
}

class CharacterBasis
{
  public:
    /// Truncation of Z^d.
    CharacterBasis(Truncation trunc, int dim) : dim_(dim), trunc_(trunc)
    {
        check_dim(dim);
        trunc.validate();
        const double est = estimate_dimension(trunc, dim);
        if (est > kMaxBasisDimension)
            throw std::length_error("character basis would have " + std::to_string(std::llround(est))
                                    + " elements (limit " + std::to_string(std::llround(kMaxBasisDimension))
                                    + "); reduce pos_radius, set_size or set_radius");
        for (Coord const& x : box(trunc.pos_radius)) {
            std::vector<Coord> sites = box(trunc.set_radius);
            for (Coord const& a : box(trunc.set_radius)) sites.push_back(a + x);
            std::sort(sites.begin(), sites.end());
            sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
            add_subsets(x, sites);
        }
    }

    /// Every (x, A) with |A| <= set_size on a periodic window; set_size = side^d gives the full space.
    CharacterBasis(LatticeWindow window, int set_size) : dim_(window.dim), periodic_(window)
    {
        trunc_ = {window.side, set_size, window.side};
        std::vector<Coord> sites;
        for (std::size_t i = 0; i < window.site_count(); ++i) sites.push_back(window.coord(i));
        std::sort(sites.begin(), sites.end());
        for (std::size_t i = 0; i < window.site_count(); ++i) add_subsets(window.coord(i), sites);
    }

    int dim() const { return dim_; }
    Truncation const& truncation() const { return trunc_; }
    std::optional<LatticeWindow> const& periodic() const { return periodic_; }
    std::size_t size() const { return elems_.size(); }
    BasisElement const& operator[](std::size_t i) const { return elems_[i]; }
    std::vector<BasisElement> const& elements() const { return elems_; }

    /// Index of (x, A) after canonicalisation, or -1 if outside the truncation.
    long find(Coord x, std::vector<Coord> A) const
    {
        canonicalize(x, A);
        auto it = index_.find(key(x, A));
        return it == index_.end() ? -1 : long(it->second);
    }

    /// Index of delta_0 (x) e_emptyset.
    std::size_t origin() const { return std::size_t(find(Coord{}, {})); }

    void canonicalize(Coord& x, std::vector<Coord>& A) const
    {
        if (periodic_) {
            for (int i = 0; i < dim_; ++i) x[i] = periodic_->wrap(x[i]);
            for (auto& a : A)
                for (int i = 0; i < dim_; ++i) a[i] = periodic_->wrap(a[i]);
        }
        std::sort(A.begin(), A.end());
    }

    /// Symmetric difference A (+) {s}.
    static std::vector<Coord> toggle(std::vector<Coord> A, Coord const& s)
    {
        auto it = std::find(A.begin(), A.end(), s);
        if (it != A.end()) A.erase(it);
        else A.push_back(s);
        return A;
    }

  private:
    std::vector<Coord> box(int radius) const
    {
        std::vector<Coord> out;
        const int w = 2 * radius + 1;
        long count = 1;
        for (int i = 0; i < dim_; ++i) count *= w;
        for (long idx = 0; idx < count; ++idx) {
            Coord c{};
            long rem = idx;
            for (int i = 0; i < dim_; ++i) {
                c[i] = int(rem % w) - radius;
                rem /= w;
            }
            out.push_back(c);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    void add_subsets(Coord const& x, std::vector<Coord> const& sites)
    {
        const int n = int(sites.size());
        std::vector<int> pick;
        std::function<void(int, int)> rec = [&](int start, int left) {
            if (left == 0) {
                BasisElement e{x, {}};
                for (int p : pick) e.A.push_back(sites[std::size_t(p)]);
                index_.emplace(key(e.x, e.A), elems_.size());
                elems_.push_back(std::move(e));
                return;
            }
            for (int i = start; i <= n - left; ++i) {
                pick.push_back(i);
                rec(i + 1, left - 1);
                pick.pop_back();
            }
        };
        for (int m = 0; m <= std::min(trunc_.set_size, n); ++m) rec(0, m);
    }

    std::vector<int> key(Coord const& x, std::vector<Coord> const& A) const
    {
        std::vector<int> k;
        k.reserve(std::size_t(dim_) * (A.size() + 1));
        for (int i = 0; i < dim_; ++i) k.push_back(x[i]);
        for (auto const& a : A)
            for (int i = 0; i < dim_; ++i) k.push_back(a[i]);
        return k;
    }

    int dim_;
    Truncation trunc_;
    std::optional<LatticeWindow> periodic_;
    std::vector<BasisElement> elems_;
    std::unordered_map<std::vector<int>, std::size_t, detail::KeyHash> index_;
};

} // namespace flipdiff
