// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "flipdiff/lattice.hpp"

using namespace flipdiff;

namespace {

WaveFunction random_field(LatticeWindow w, unsigned seed)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> g;
    WaveFunction psi(w);
    for (auto& a : psi.amp) a = {g(gen), g(gen)};
    return psi;
}

HoppingKernel long_range_1d()
{
    HoppingKernel h;
    h.dim = 1;
    h.terms = {{{1}, 1.0}, {{-1}, 1.0}, {{2}, 0.5}, {{-2}, 0.5}};
    return h;
}

} // namespace

TEST(Window, IndexRoundTrip)
{
    LatticeWindow w(3, 5);
    EXPECT_EQ(w.site_count(), 125u);
    for (std::size_t i = 0; i < w.site_count(); ++i) EXPECT_EQ(w.index(w.coord(i)), i);
    EXPECT_EQ(w.index({-1, 0, 0}), w.index({4, 0, 0}));
    EXPECT_EQ(w.index({0, 7, -5}), w.index({0, 2, 0}));
    Coord c = w.minimal_image({3, 2, 4});
    EXPECT_EQ(c, (Coord{-2, 2, -1}));
}

TEST(Validate, NearestNeighbourPasses)
{
    auto r = validate_hopping(HoppingKernel::nearest_neighbor(1), 1);
    EXPECT_TRUE(r.ok());
    EXPECT_TRUE(validate_hopping(HoppingKernel::nearest_neighbor(3), 3).ok());
}

TEST(Validate, HyperplaneSupportFailsSpan)
{
    HoppingKernel h;
    h.dim = 2;
    h.terms = {{{1, 0}, 1.0}, {{-1, 0}, 1.0}};
    auto r = validate_hopping(h, 2);
    EXPECT_TRUE(r.self_adjoint);
    EXPECT_FALSE(r.spans_space);
    EXPECT_FALSE(r.ok());
}

TEST(Validate, AsymmetricFailsSelfAdjoint)
{
    HoppingKernel h;
    h.dim = 1;
    h.terms = {{{1}, 1.0}, {{-1}, 2.0}};
    auto r = validate_hopping(h, 1);
    EXPECT_FALSE(r.self_adjoint);
    EXPECT_TRUE(r.spans_space);
}

TEST(Validate, ComplexHermitianKernelPasses)
{
    HoppingKernel h;
    h.dim = 1;
    h.terms = {{{1}, cplx(0.3, 0.7)}, {{-1}, cplx(0.3, -0.7)}};
    EXPECT_TRUE(validate_hopping(h, 1).ok());
}

TEST(Validate, EmptyRejected)
{
    HoppingKernel h;
    EXPECT_THROW(validate_hopping(h, 1), std::invalid_argument);
}

TEST(Hopping, DeltaSpreadsToNeighbours)
{
    LatticeWindow w(1, 9);
    auto out = apply_hopping(HoppingKernel::nearest_neighbor(1), WaveFunction::delta(w));
    for (std::size_t i = 0; i < w.site_count(); ++i) {
        double expect = (i == 1 || i == 8) ? 1.0 : 0.0;
        EXPECT_EQ(out.amp[i], cplx(expect));
    }
}

TEST(Hopping, ConstantIsEigenvector)
{
    LatticeWindow w(1, 10);
    WaveFunction one(w);
    for (auto& a : one.amp) a = 1.0;
    auto out = apply_hopping(HoppingKernel::nearest_neighbor(1), one);
    for (auto a : out.amp) EXPECT_EQ(a, cplx(2.0));
}

TEST(Hopping, SelfAdjointOnRandomFields)
{
    for (int d = 1; d <= 3; ++d) {
        LatticeWindow w(d, d == 3 ? 5 : 11);
        auto h = HoppingKernel::nearest_neighbor(d);
        h.terms.push_back({Coord{1, 1, 0}, cplx(0.2, 0.1)});
        h.terms.push_back({Coord{-1, -1, 0}, cplx(0.2, -0.1)});
        if (d == 1) h.terms.resize(2);
        for (unsigned s = 0; s < 5; ++s) {
            auto phi = random_field(w, 2 * s), psi = random_field(w, 2 * s + 1);
            cplx a = inner(phi, apply_hopping(h, psi));
            cplx b = inner(apply_hopping(h, phi), psi);
            EXPECT_LT(std::abs(a - b), 1e-12 * std::abs(a) + 1e-12);
        }
    }
}

TEST(Hopping, PlaneWavesAreEigenvectors)
{
    LatticeWindow w(2, 8);
    auto h = HoppingKernel::nearest_neighbor(2);
    h.terms.push_back({Coord{1, -1, 0}, cplx(0.0, 0.4)});
    h.terms.push_back({Coord{-1, 1, 0}, cplx(0.0, -0.4)});
    for (int m0 = 0; m0 < 8; ++m0)
        for (int m1 = 0; m1 < 8; m1 += 3) {
            KVector k = w.dual_vector({m0, m1, 0});
            WaveFunction pw(w);
            for (std::size_t i = 0; i < w.site_count(); ++i)
                pw.amp[i] = std::exp(cplx(0.0, dot(k, w.coord(i), 2)));
            auto out = apply_hopping(h, pw);
            cplx e = symbol_eval(h, k);
            EXPECT_LT(std::abs(e.imag()), 1e-14);
            for (std::size_t i = 0; i < w.site_count(); ++i)
                EXPECT_LT(std::abs(out.amp[i] - e * pw.amp[i]), 1e-12);
        }
}

TEST(Symbol, NearestNeighbourValues)
{
    auto h1 = HoppingKernel::nearest_neighbor(1);
    EXPECT_NEAR(symbol_eval(h1, {0.0}).real(), 2.0, 1e-15);
    EXPECT_NEAR(std::abs(symbol_eval(h1, {std::numbers::pi / 2})), 0.0, 1e-15);
    auto h2 = HoppingKernel::nearest_neighbor(2);
    EXPECT_NEAR(symbol_eval(h2, {std::numbers::pi, std::numbers::pi}).real(), -4.0, 1e-14);
}

TEST(Norm, NearestNeighbour)
{
    EXPECT_NEAR(hopping_norm(HoppingKernel::nearest_neighbor(1)), 2.0, 1e-9);
    EXPECT_NEAR(hopping_norm(HoppingKernel::nearest_neighbor(2)), 4.0, 1e-9);
    EXPECT_NEAR(hopping_norm(HoppingKernel::nearest_neighbor(3)), 6.0, 1e-9);
}

TEST(Norm, LongRangeAgainstDenseGrid)
{
    // oracle: 10^6-point grid of |2 cos k + cos 2k|
    double best = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        double k = 2.0 * std::numbers::pi * i / n;
        best = std::max(best, std::abs(2.0 * std::cos(k) + std::cos(2.0 * k)));
    }
    EXPECT_NEAR(hopping_norm(long_range_1d()), best, 1e-9);
    EXPECT_NEAR(best, 3.0, 1e-12);
}

TEST(Norm, DominatesDualGridSymbol)
{
    auto h = long_range_1d();
    LatticeWindow w(1, 37);
    double grid = 0.0;
    for (int m = 0; m < 37; ++m) grid = std::max(grid, std::abs(symbol_eval(h, w.dual_vector({m}))));
    double nrm = hopping_norm(h);
    EXPECT_GE(nrm + 1e-12, grid);
    EXPECT_LT(nrm - grid, 0.05);
}
