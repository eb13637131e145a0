// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "flipdiff/evolution.hpp"

using namespace flipdiff;

namespace {

WaveFunction random_state(LatticeWindow w, unsigned seed)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> g;
    WaveFunction psi(w);
    for (auto& a : psi.amp) a = {g(gen), g(gen)};
    double n = psi.norm();
    for (auto& a : psi.amp) a /= n;
    return psi;
}

PotentialPath random_path(LatticeWindow w, double rate, double t_max, std::uint64_t seed)
{
    FlipProcessConfig c{rate, w};
    auto rng = make_stream(seed, 0);
    return sample_path(c, t_max, rng);
}

double distance(WaveFunction const& a, WaveFunction const& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.amp.size(); ++i) s += std::norm(a.amp[i] - b.amp[i]);
    return std::sqrt(s);
}

/// Interval-by-interval dense exponential.
WaveFunction dense_reference(WaveFunction psi, PotentialPath const& path, double t,
                             HoppingKernel const& h, double lambda)
{
    Eigen::VectorXcd v = Eigen::Map<Eigen::VectorXcd>(psi.amp.data(), Eigen::Index(psi.amp.size()));
    for_each_interval(path, t, [&](double t0, double t1, SpinConfig const& s) {
        Eigen::MatrixXcd H = dense_hamiltonian(h, lambda, s, psi.window);
        v = (cplx(0.0, -(t1 - t0)) * H).exp() * v;
    });
    for (std::size_t i = 0; i < psi.amp.size(); ++i) psi.amp[i] = v(Eigen::Index(i));
    return psi;
}

SpinConfig all_up(std::size_t n)
{
    SpinConfig s;
    s.spins.assign(n, 1);
    return s;
}

} // namespace

TEST(Propagate, ZeroIntervalIsIdentity)
{
    LatticeWindow w(1, 16);
    auto psi = random_state(w, 1);
    auto s = all_up(16);
    s.spins[3] = -1;
    auto out = propagate_constant(psi, HoppingKernel::nearest_neighbor(1), 0.8, s, 0.0);
    EXPECT_EQ(out.amp, psi.amp);
}

TEST(Propagate, FreeEvolutionIsBessel)
{
    LatticeWindow w(1, 64);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto s = all_up(64);
    Eigen::MatrixXcd T = dense_hamiltonian(h, 0.0, s, w);
    for (double t : {0.3, 1.0, 2.5, 5.0}) {
        auto out = propagate_constant(WaveFunction::delta(w), h, 0.0, s, t);
        Eigen::VectorXcd ref = (cplx(0.0, -t) * T).exp().col(0);
        for (int x = -20; x <= 20; ++x) {
            double p = std::norm(out.amp[w.index({x})]);
            double bessel = std::cyl_bessel_j(double(std::abs(x)), 2.0 * t);
            EXPECT_NEAR(p, bessel * bessel, 1e-8) << "t=" << t << " x=" << x;
            EXPECT_NEAR(p, std::norm(ref(Eigen::Index(w.index({x})))), 1e-8);
        }
    }
}

TEST(Propagate, NormPreserved)
{
    LatticeWindow w(2, 12);
    auto h = HoppingKernel::nearest_neighbor(2);
    FlipProcessConfig c{1.0, w};
    auto rng = make_stream(4, 4);
    for (unsigned k = 0; k < 4; ++k) {
        auto psi = random_state(w, k);
        auto out = propagate_constant(psi, h, 1.3, sample_invariant(c, rng), 0.37 + 2.0 * k);
        EXPECT_NEAR(out.norm(), 1.0, 1e-10);
    }
}

TEST(Propagate, RejectsNonFinite)
{
    LatticeWindow w(1, 8);
    auto psi = WaveFunction::delta(w);
    psi.amp[2] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(propagate_constant(psi, HoppingKernel::nearest_neighbor(1), 1.0, all_up(8), 1.0),
                 std::invalid_argument);
}

TEST(Propagate, MatchesDenseExponential)
{
    LatticeWindow w(1, 20);
    HoppingKernel h;
    h.dim = 1;
    h.terms = {{{1}, cplx(1.0, 0.3)}, {{-1}, cplx(1.0, -0.3)}, {{3}, 0.25}, {{-3}, 0.25}};
    auto s = all_up(20);
    for (int i = 0; i < 20; i += 3) s.spins[i] = -1;
    auto psi = random_state(w, 9);
    PotentialPath p{s, {}, 10.0};
    auto ref = dense_reference(psi, p, 7.3, h, 0.9);
    auto out = propagate_constant(psi, h, 0.9, s, 7.3);
    EXPECT_LT(distance(out, ref), 1e-10);
}

TEST(Trajectory, ZeroEventsIsConstantPropagation)
{
    LatticeWindow w(1, 40);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto s = all_up(40);
    s.spins[1] = -1;
    PotentialPath p{s, {}, 3.0};
    auto a = evolve_trajectory(WaveFunction::delta(w), p, 3.0, h, 0.7);
    auto b = propagate_constant(WaveFunction::delta(w), h, 0.7, s, 3.0);
    EXPECT_LT(distance(a, b), 1e-12);
}

TEST(Trajectory, FreeEvolutionIgnoresPath)
{
    LatticeWindow w(1, 64);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto a = evolve_trajectory(WaveFunction::delta(w), random_path(w, 1.0, 4.0, 1), 4.0, h, 0.0);
    auto b = evolve_trajectory(WaveFunction::delta(w), random_path(w, 1.0, 4.0, 2), 4.0, h, 0.0);
    EXPECT_LT(distance(a, b), 1e-10);
}

TEST(Trajectory, MatchesDenseReference)
{
    for (int d = 1; d <= 2; ++d) {
        LatticeWindow w(d, d == 1 ? 60 : 8);
        auto h = HoppingKernel::nearest_neighbor(d);
        auto path = random_path(w, 1.0, 3.0, 17 + d);
        auto psi0 = WaveFunction::delta(w);
        auto ref = dense_reference(psi0, path, 3.0, h, 1.0);
        auto out = evolve_trajectory(psi0, path, 3.0, h, 1.0);
        EXPECT_LT(distance(out, ref), 1e-10) << "d=" << d;
    }
}

TEST(Trajectory, BoxAndFullKernelsAgree)
{
    LatticeWindow w(1, 128);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto path = random_path(w, 1.0, 12.0, 5);
    Propagator prop(w, h, 1.0);
    std::vector<double> times{1.0, 4.0, 12.0};
    std::vector<WaveFunction> boxed, full;
    evolve_checkpoints(prop, WaveFunction::delta(w), path, times,
                       [&](std::size_t, double, WaveFunction const& p) { boxed.push_back(p); }, true);
    evolve_checkpoints(prop, WaveFunction::delta(w), path, times,
                       [&](std::size_t, double, WaveFunction const& p) { full.push_back(p); }, false);
    for (std::size_t i = 0; i < times.size(); ++i) EXPECT_LT(distance(boxed[i], full[i]), 1e-10);
}

TEST(Trajectory, UnitarityAndLightCone)
{
    LatticeWindow w(1, 256);
    auto h = HoppingKernel::nearest_neighbor(1);
    const double nrm = hopping_norm(h);
    auto path = random_path(w, 1.0, 50.0, 31);
    Propagator prop(w, h, 1.0);
    std::vector<double> times{1.0, 5.0, 10.0, 20.0, 35.0, 50.0};
    evolve_checkpoints(prop, WaveFunction::delta(w), path, times,
                       [&](std::size_t, double t, WaveFunction const& psi) {
                           EXPECT_NEAR(psi.norm_squared(), 1.0, 1e-9);
                           double outside = 0.0;
                           for (std::size_t i = 0; i < psi.amp.size(); ++i)
                               if (std::abs(w.minimal_image(w.coord(i))[0]) > nrm * t + 10)
                                   outside += std::norm(psi.amp[i]);
                           EXPECT_LE(outside, 1e-8) << "t=" << t;
                       });
}

TEST(Trajectory, GroupLaw)
{
    LatticeWindow w(1, 96);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto path = random_path(w, 1.0, 8.0, 77);
    const double s = 3.0, t = 8.0;
    auto mid = evolve_trajectory(WaveFunction::delta(w), path, s, h, 1.0);
    PotentialPath rest{potential_at(path, s), {}, t - s};
    for (auto const& e : path.events)
        if (e.time > s) rest.events.push_back({e.time - s, e.site});
    auto two = evolve_trajectory(mid, rest, t - s, h, 1.0);
    auto one = evolve_trajectory(WaveFunction::delta(w), path, t, h, 1.0);
    EXPECT_LT(distance(one, two), 1e-10);
}

TEST(Trajectory, BeyondHorizonRejected)
{
    LatticeWindow w(1, 8);
    auto path = random_path(w, 1.0, 1.0, 1);
    EXPECT_THROW(evolve_trajectory(WaveFunction::delta(w), path, 1.5, HoppingKernel::nearest_neighbor(1), 1.0),
                 std::out_of_range);
}

TEST(Dyson, OrderZeroIsInitialState)
{
    LatticeWindow w(1, 5);
    auto psi = random_state(w, 3);
    auto path = random_path(w, 1.0, 1.0, 3);
    auto out = dyson_partial_sum(psi, path, 0.7, 0, HoppingKernel::nearest_neighbor(1), 0.5);
    EXPECT_EQ(out.amp, psi.amp);
}

TEST(Dyson, TinyInstance)
{
    // The order-8 remainder is dominated by the order-9 term, about 1.5e-6 here;
    // 1e-7 needs order 10.
    LatticeWindow w(1, 5);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto path = random_path(w, 1.0, 0.5, 8);
    auto psi0 = WaveFunction::delta(w);
    auto exact = evolve_trajectory(psi0, path, 0.5, h, 0.5);
    std::vector<double> norms;
    auto d8 = dyson_partial_sum(psi0, path, 0.5, 8, h, 0.5);
    auto d12 = dyson_partial_sum(psi0, path, 0.5, 12, h, 0.5, &norms);
    double e8 = distance(exact, d8);
    EXPECT_LT(e8, 1.2 * norms[9]);
    EXPECT_GT(e8, 0.8 * norms[9]);
    EXPECT_LT(distance(exact, dyson_partial_sum(psi0, path, 0.5, 10, h, 0.5)), 1e-7);
    EXPECT_LT(distance(exact, d12), 1e-9);
}

TEST(Dyson, TermNormsObeySimplexBound)
{
    LatticeWindow w(1, 7);
    auto h = HoppingKernel::nearest_neighbor(1);
    const double lambda = 0.8, t = 1.7;
    auto path = random_path(w, 2.0, t, 12);
    std::vector<double> norms;
    dyson_partial_sum(random_state(w, 5), path, t, 12, h, lambda, &norms);
    const double b = hopping_norm(h) + lambda;
    double bound = 1.0;
    for (int m = 0; m <= 12; ++m) {
        if (m > 0) bound *= b * t / m;
        EXPECT_LE(norms[m], bound * (1 + 1e-12)) << "m=" << m;
    }
}

TEST(Dyson, ConvergenceOrderByHalving)
{
    LatticeWindow w(1, 5);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto path = random_path(w, 1.0, 0.2, 40);
    auto psi0 = WaveFunction::delta(w);
    for (int n : {1, 2, 3, 4}) {
        const double t = 0.1;
        auto err = [&](double tt) {
            return distance(evolve_trajectory(psi0, path, tt, h, 0.5), dyson_partial_sum(psi0, path, tt, n, h, 0.5));
        };
        double ratio = err(t) / err(t / 2);
        double expect = std::pow(2.0, n + 1);
        EXPECT_GT(ratio, 0.75 * expect) << "n=" << n;
        EXPECT_LT(ratio, 1.25 * expect) << "n=" << n;
    }
}

TEST(Dyson, RejectsLargeOrder)
{
    LatticeWindow w(1, 5);
    auto path = random_path(w, 1.0, 1.0, 3);
    EXPECT_THROW(dyson_partial_sum(WaveFunction::delta(w), path, 0.5, 13, HoppingKernel::nearest_neighbor(1), 0.5),
                 std::invalid_argument);
}

TEST(DensityOracle, PureStateMatchesTrajectory)
{
    LatticeWindow w(1, 6);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto path = random_path(w, 1.0, 2.0, 2);
    Eigen::MatrixXcd rho0 = Eigen::MatrixXcd::Zero(6, 6);
    rho0(0, 0) = 1.0;
    auto rho = evolve_density_oracle(rho0, path, 2.0, h, 0.6, w);
    auto psi = evolve_trajectory(WaveFunction::delta(w), path, 2.0, h, 0.6);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(rho(i, i).real(), std::norm(psi.amp[i]), 1e-9);
    EXPECT_NEAR(rho.trace().real(), 1.0, 1e-10);
}

TEST(DensityOracle, MixedStateIsLinear)
{
    LatticeWindow w(1, 7);
    auto h = HoppingKernel::nearest_neighbor(1);
    auto path = random_path(w, 1.5, 2.5, 6);
    Eigen::MatrixXcd rho0 = Eigen::MatrixXcd::Zero(7, 7);
    rho0(0, 0) = 0.5;
    rho0(1, 1) = 0.5;
    for (double t : {0.0, 0.4, 2.5}) {
        auto rho = evolve_density_oracle(rho0, path, t, h, 0.9, w);
        auto a = evolve_trajectory(WaveFunction::delta(w, {0}), path, t, h, 0.9);
        auto b = evolve_trajectory(WaveFunction::delta(w, {1}), path, t, h, 0.9);
        EXPECT_NEAR(rho.trace().real(), 1.0, 1e-10);
        for (int i = 0; i < 7; ++i)
            EXPECT_NEAR(rho(i, i).real(), 0.5 * (std::norm(a.amp[i]) + std::norm(b.amp[i])), 1e-9);
    }
}

TEST(DensityOracle, WindowTooLargeRejected)
{
    LatticeWindow w(1, 9);
    auto path = random_path(w, 1.0, 1.0, 1);
    EXPECT_THROW(evolve_density_oracle(Eigen::MatrixXcd::Identity(9, 9) / 9.0, path, 0.5,
                                       HoppingKernel::nearest_neighbor(1), 1.0, w),
                 std::invalid_argument);
}
