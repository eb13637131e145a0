// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "flipdiff/ensemble.hpp"

using namespace flipdiff;

namespace {

EnsembleSpec small_spec(double lambda = 1.0, std::size_t n = 40)
{
    EnsembleSpec s;
    s.window = LatticeWindow(1, 128);
    s.kernel = HoppingKernel::nearest_neighbor(1);
    s.lambda = lambda;
    s.n_traj = n;
    s.master_seed = 2024;
    s.times = {0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0};
    for (double k : {0.1, 0.3, -0.3, 0.6}) s.cf_k.push_back({k});
    return s;
}

} // namespace

TEST(Ensemble, SingleTrajectoryIsItsOwnMean)
{
    auto s = small_spec(1.0, 1);
    auto r = run_ensemble(s);
    auto rng = make_stream(s.master_seed, 0);
    auto path = sample_path(FlipProcessConfig{s.rate, s.window}, s.t_max(), rng);
    auto psi = evolve_trajectory(WaveFunction::delta(s.window), path, 6.0, s.kernel, s.lambda);
    for (std::size_t i = 0; i < psi.amp.size(); ++i) EXPECT_NEAR(r.field.mean[4][i], std::norm(psi.amp[i]), 1e-12);
}

TEST(Ensemble, TraceConserved)
{
    auto r = run_ensemble(small_spec());
    for (std::size_t c = 0; c < r.field.times.size(); ++c) EXPECT_NEAR(r.field.site_sum(c), 1.0, 1e-8);
    EXPECT_LE(r.max_norm_drift, 1e-9);
}

TEST(Ensemble, FreeFieldHasNoVariance)
{
    auto r = run_ensemble(small_spec(0.0, 10));
    auto free = propagate_constant(WaveFunction::delta(r.field.window), HoppingKernel::nearest_neighbor(1), 0.0,
                                   potential_at(PotentialPath{SpinConfig{std::vector<std::int8_t>(128, 1)}, {}, 1.0}, 0.0),
                                   10.0);
    for (std::size_t i = 0; i < 128; ++i) {
        EXPECT_NEAR(r.field.mean.back()[i], std::norm(free.amp[i]), 1e-10);
        EXPECT_LT(r.field.se.back()[i], 1e-9);
    }
}

TEST(Ensemble, DeterministicAcrossThreadCounts)
{
    auto s = small_spec(1.0, 70);
    auto a = run_ensemble(s);
    s.threads = 3;
    auto b = run_ensemble(s);
    EXPECT_EQ(a.field.mean, b.field.mean);
    EXPECT_EQ(a.field.se, b.field.se);
    EXPECT_EQ(a.records.moments, b.records.moments);
    EXPECT_EQ(a.records.cf, b.records.cf);
    auto fa = fit_diffusion_m2(a, 2.0, 10.0), fb = fit_diffusion_m2(b, 2.0, 10.0);
    EXPECT_EQ(fa.D(0, 0), fb.D(0, 0));
    EXPECT_EQ(fa.covariance(0, 0), fb.covariance(0, 0));
}

TEST(Ensemble, NormDriftAborts)
{
    auto s = small_spec(1.0, 2);
    s.drift_abort = 0.0;
    s.tol.eps_step = 1e-4;
    EXPECT_THROW(run_ensemble(s), NormDriftError);
}

TEST(Ensemble, InvalidSpecsRejected)
{
    auto s = small_spec();
    s.n_traj = 0;
    EXPECT_THROW(run_ensemble(s), std::invalid_argument);
    s = small_spec();
    s.times = {2.0, 1.0};
    EXPECT_THROW(run_ensemble(s), std::invalid_argument);
}

TEST(CharacteristicFunction, Basics)
{
    auto r = run_ensemble(small_spec());
    for (std::size_t c = 0; c < r.field.times.size(); ++c) {
        EXPECT_NEAR(std::abs(characteristic_function(r.field, c, {0.0}) - 1.0), 0.0, 1e-8);
        for (double k : {0.2, 1.1, 2.9}) {
            cplx a = characteristic_function(r.field, c, {k}), b = characteristic_function(r.field, c, {-k});
            EXPECT_LT(std::abs(a - std::conj(b)), 1e-12);
        }
    }
    for (int m = 0; m < 128; m += 13) {
        cplx v = characteristic_function(r.field, 0, r.field.window.dual_vector({m}));
        EXPECT_EQ(v, cplx(1.0));
    }
    auto v = characteristic_function(r, 5, {0.3});
    EXPECT_GT(v.se, 0.0);
    EXPECT_TRUE(std::isnan(characteristic_function(r, 5, {0.31}).se));
}

TEST(CharacteristicFunction, PositiveAtSmallK)
{
    auto s = small_spec(1.0, 60);
    s.cf_k = {{0.2}, {0.5}, {std::numbers::pi / 4}};
    auto r = run_ensemble(s);
    for (std::size_t c = 0; c < r.field.times.size(); ++c)
        for (auto const& k : s.cf_k) {
            auto v = characteristic_function(r, c, k);
            EXPECT_GT(v.value.real() + 3 * v.se, 0.0);
            EXPECT_LE(v.value.real() - 3 * v.se, 1.0);
        }
}

TEST(SecondMoment, FreeParticleIsTwoTSquared)
{
    auto r = run_ensemble(small_spec(0.0, 2));
    EXPECT_EQ(second_moment(r.field, 0).value, 0.0);
    for (std::size_t c = 1; c < r.field.times.size(); ++c) {
        double t = r.field.times[c];
        auto m = second_moment(r, c);
        EXPECT_NEAR(m.value / (2 * t * t), 1.0, 1e-6) << "t=" << t;
        EXPECT_TRUE(m.valid);
    }
}

TEST(SecondMoment, BoundaryMassFlagsSmallWindow)
{
    auto s = small_spec(0.0, 1);
    s.window = LatticeWindow(1, 24);
    auto r = run_ensemble(s);
    EXPECT_TRUE(second_moment(r.field, 1).valid);
    EXPECT_FALSE(second_moment(r.field, r.field.times.size() - 1).valid);
}

TEST(SecondMoment, MonotoneUnderDisorder)
{
    auto r = run_ensemble(small_spec(1.0, 60));
    for (std::size_t c = 1; c < r.field.times.size(); ++c) {
        auto a = second_moment(r, c - 1), b = second_moment(r, c);
        EXPECT_GT(b.value - a.value + 3 * std::hypot(a.se, b.se), 0.0);
    }
}

TEST(Fits, LinearSeriesGivesExactSlope)
{
    std::vector<double> t{5, 6, 7, 8, 9, 10};
    std::vector<std::vector<double>> mom;
    for (double x : t) mom.push_back({3.7 * x});
    auto f = fit_m2_series(t, mom, 1);
    EXPECT_NEAR(2.0 * f.D(0, 0), 3.7, 1e-12);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    EXPECT_NEAR(f.exponent, 1.0, 1e-12);
}

TEST(Fits, BallisticRunIsFlagged)
{
    auto s = small_spec(0.0, 4);
    auto r = run_ensemble(s);
    auto est = fit_diffusion_m2(r, 1.0, 10.0);
    EXPECT_TRUE(est.flagged);
    EXPECT_NEAR(est.exponent, 2.0, 0.1);
}

TEST(Fits, TooFewCheckpointsRejected)
{
    auto r = run_ensemble(small_spec(1.0, 4));
    EXPECT_THROW(fit_diffusion_m2(r, 8.0, 10.0), std::invalid_argument);
}

TEST(Fits, ExactGaussianCF)
{
    Eigen::Matrix2d D;
    D << 0.7, 0.15, 0.15, 1.3;
    std::vector<CFPoint> pts;
    for (double t : {2.0, 3.0, 4.0})
        for (KVector k : {KVector{0.1, 0.0}, KVector{0.0, 0.2}, KVector{0.1, 0.1}, KVector{-0.2, 0.1}}) {
            double q = D(0, 0) * k[0] * k[0] + 2 * D(0, 1) * k[0] * k[1] + D(1, 1) * k[1] * k[1];
            pts.push_back({t, k, 0.93 * std::exp(-t * q)});
        }
    auto f = fit_cf_series(pts, 2);
    EXPECT_LT((f.D - Eigen::MatrixXd(D)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(Fits, CfAndM2AgreeOnOneEnsemble)
{
    auto s = small_spec(1.0, 300);
    s.window = LatticeWindow(1, 256);
    s.times = default_checkpoints(20.0, 4, 8);
    s.cf_k = {{0.1}, {0.15}, {0.2}};
    auto r = run_ensemble(s);
    auto m2 = fit_diffusion_m2(r, 10.0, 20.0);
    auto cf = fit_diffusion_cf(r, 10.0, 20.0, s.cf_k);
    ASSERT_FALSE(cf.flagged) << cf.diagnostics;
    double joint = std::hypot(m2.sigma(0, 0), cf.sigma(0, 0));
    EXPECT_LT(std::abs(m2.D(0, 0) - cf.D(0, 0)), 3 * joint) << m2.D(0, 0) << " vs " << cf.D(0, 0);
    EXPECT_FALSE(m2.flagged) << m2.diagnostics;
}

TEST(Fits, ReflectionSymmetryTwoDimensions)
{
    EnsembleSpec s;
    s.window = LatticeWindow(2, 64);
    s.kernel = HoppingKernel::nearest_neighbor(2);
    s.lambda = 1.5;
    s.n_traj = 30;
    s.times = {1.0, 1.5, 2.0, 2.5, 3.0};
    auto r = run_ensemble(s);
    auto est = fit_diffusion_m2(r, 1.0, 3.0);
    EXPECT_LT(std::abs(est.D(0, 1)), 3 * est.sigma(0, 1) + 1e-12);
    EXPECT_LT(std::abs(est.D(0, 0) - est.D(1, 1)), 3 * std::hypot(est.sigma(0, 0), est.sigma(1, 1)));
}

TEST(Fits, SnapToDualGrid)
{
    LatticeWindow w(1, 2048);
    auto s = snap_to_dual(w, {0.5 / 20.0});
    EXPECT_LE(s.snap_error, std::numbers::pi / 2048 + 1e-15);
    double m = s.k[0] / (2 * std::numbers::pi / 2048);
    EXPECT_NEAR(m, std::round(m), 1e-9);
}
