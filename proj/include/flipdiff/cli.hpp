// SPDX-License-Identifier: Apache-2.0
//
// The subcommands behind tools/flipdiff: each takes a resolved RunConfig,
// writes its artifacts plus a manifest into cfg.output and returns an exit
// code (0 pass, 1 validation error, 2 numerical failure, 3 threshold failure).
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "augmented.hpp"
#include "config.hpp"
#include "ensemble.hpp"
#include "report.hpp"
#include "spectral.hpp"

namespace flipdiff {

enum ExitCode : int { kExitPass = 0, kExitValidation = 1, kExitNumerical = 2, kExitThreshold = 3 };

/// Thresholds of the compare and oracle commands.
inline constexpr double kCompareRelTol = 0.10;
inline constexpr double kCompareSigmas = 3.0;
inline constexpr double kOracleMaxSE = 0.01;
inline constexpr double kFiberTol = 1e-9;

struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<KVector> cf_vectors(RunConfig const& c)
{
    const LatticeWindow w(c.dim, c.side);
    std::vector<KVector> ks;
    for (int m : c.cf_modes) {
        for (int a = 0; a < c.dim; ++a) {
            Coord e{};
            e[a] = m;
            ks.push_back(w.dual_vector(e));
        }
        for (int a = 0; a < c.dim; ++a)
            for (int b = a + 1; b < c.dim; ++b) {
                Coord e{};
                e[a] = e[b] = m;
                ks.push_back(w.dual_vector(e));
            }
    }
    return ks;
}

inline Json estimate_json(DiffusionEstimate const& e)
{
    const int d = int(e.D.rows());
    Eigen::MatrixXd sig(d, d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) sig(a, b) = e.sigma(a, b);
    Json j{{"method", to_string(e.method)}, {"D", to_json(e.D)}, {"sigma", to_json(sig)},
           {"covariance", to_json(e.covariance)}, {"t_lo", e.t_lo}, {"t_hi", e.t_hi}, {"r2", e.r2},
           {"points", e.points}, {"positive_definite", e.positive_definite}, {"flagged", e.flagged},
           {"diagnostics", e.diagnostics}};
    if (e.method == DiffusionMethod::m2_slope) j["exponent"] = e.exponent;
    return j;
}

inline Json read_json(std::filesystem::path const& p)
{
    std::ifstream is(p);
    if (!is) throw UsageError("cannot open " + p.string());
    try {
        return Json::parse(is);
    } catch (nlohmann::json::exception const& e) {
        throw UsageError(p.string() + ": " + e.what());
    }
}

} // namespace detail

//---------------------------------------------------------------------------//
inline EnsembleSpec ensemble_spec(RunConfig const& c)
{
    EnsembleSpec s;
    s.kernel = c.hopping();
    s.lambda = c.lambda;
    s.rate = c.rate;
    s.window = LatticeWindow(c.dim, c.side);
    s.n_traj = c.n_traj;
    s.master_seed = c.seed;
    s.times = c.times;
    s.cf_k = detail::cf_vectors(c);
    s.tol.eps_step = c.eps_step;
    s.threads = c.thread_count();
    return s;
}

/// Runs the ensemble and writes meanfield/m2/cf tables and the diffusion JSON.
/// Returns the path of the JSON document.
inline std::filesystem::path simulate(RunConfig const& c, std::ostream& log)
{
    OutputSet out(c.output, "simulate");
    const std::string tag = run_tag(c);
    const int d = c.dim;
    log << "simulate: " << c.n_traj << " trajectories on " << c.side << "^" << d << ", t_max " << c.t_max() << "\n";
    EnsembleResult r = run_ensemble(ensemble_spec(c));
    auto const& f = r.field;
    const std::size_t T = f.times.size();

    std::vector<std::string> xcols, kcols;
    for (int a = 0; a < d; ++a) {
        xcols.push_back("x" + std::to_string(a));
        kcols.push_back("k" + std::to_string(a));
    }
    auto cols = [](std::vector<std::string> head, std::vector<std::string> const& mid, std::vector<std::string> tail) {
        head.insert(head.end(), mid.begin(), mid.end());
        head.insert(head.end(), tail.begin(), tail.end());
        return head;
    };

    CsvTable field({"meanfield", 1, cols({"t"}, xcols, {"mean", "se"})});
    for (std::size_t ci = 0; ci < T; ++ci)
        for (std::size_t i = 0; i < f.mean[ci].size(); ++i) {
            Coord x = f.window.minimal_image(f.window.coord(i));
            std::vector<double> row{f.times[ci]};
            for (int a = 0; a < d; ++a) row.push_back(x[a]);
            row.push_back(f.mean[ci][i]);
            row.push_back(f.se[ci][i]);
            field.row(row);
        }

    CsvTable m2({"m2", 1, {"t", "m2", "m2_se", "boundary_mass", "valid", "site_sum"}});
    double worst_sum = 0.0;
    bool all_valid = true;
    for (std::size_t ci = 0; ci < T; ++ci) {
        auto s = second_moment(r, ci);
        const double sum = f.site_sum(ci);
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        all_valid &= s.valid;
        m2.row({f.times[ci], s.value, s.se, s.boundary_mass, s.valid ? 1.0 : 0.0, sum});
    }

    CsvTable cf({"cf", 1, cols({"t", "mode"}, kcols, {"re", "im", "re_se"})});
    auto const& ks = r.spec.cf_k;
    const std::size_t per_mode = ks.size() / std::max<std::size_t>(1, c.cf_modes.size());
    for (std::size_t ci = 0; ci < T; ++ci)
        for (std::size_t q = 0; q < ks.size(); ++q) {
            auto v = characteristic_function(r, ci, ks[q]);
            std::vector<double> row{f.times[ci], double(c.cf_modes[q / per_mode])};
            for (int a = 0; a < d; ++a) row.push_back(ks[q][a]);
            row.insert(row.end(), {v.value.real(), v.value.imag(), v.se});
            cf.row(row);
        }

    auto m2_est = fit_diffusion_m2(r, c.fit_lo, c.fit_hi);
    auto cf_est = fit_diffusion_cf(r, c.fit_lo, c.fit_hi, ks);
    auto expo = m2_exponent(r, c.fit_lo, c.fit_hi);
    std::vector<KVector> axis0;
    for (std::size_t q = 0; q < ks.size(); q += per_mode) axis0.push_back(ks[q]);
    auto g = gaussian_shape(r, T - 1, axis0);

    Json j{{"schema", "diffusion_estimate/1"}, {"version", kVersion}, {"model", model_json(c)},
           {"ensemble", {{"n_traj", c.n_traj}, {"seed", c.seed}, {"t_max", c.t_max()}, {"checkpoints", T}}},
           {"estimates", Json::array({detail::estimate_json(m2_est), detail::estimate_json(cf_est)})},
           {"m2_exponent", {{"value", expo.value}, {"se", expo.se}, {"t_lo", c.fit_lo}, {"t_hi", c.fit_hi}}},
           {"gaussian_shape",
            {{"t", f.times[T - 1]}, {"r2", g.fit.r2}, {"slope", g.fit.slope}, {"slope_se", g.slope_se},
             {"intercept", g.fit.intercept}, {"intercept_se", g.intercept_se}}},
           {"max_norm_drift", r.max_norm_drift},
           {"max_site_sum_deviation", worst_sum},
           {"window_valid", all_valid}};

    const std::string field_csv = "meanfield_" + tag + ".csv", m2_csv = "m2_" + tag + ".csv",
                      cf_csv = "cf_" + tag + ".csv";
    out.write(field_csv, field);
    out.write(m2_csv, m2);
    out.write(cf_csv, cf);
    auto json_path = out.write("diffusion_" + tag + ".json", j);
    out.write("plot_simulate.gp", plot_simulate(m2_csv, cf_csv, field_csv, c.cf_modes, d, f.times[T - 1]), "gnuplot");
    out.write_manifest(c);
    log << "simulate: D(m2) = " << m2_est.D(0, 0) << " +- " << m2_est.sigma(0, 0) << ", D(cf) = " << cf_est.D(0, 0)
        << " +- " << cf_est.sigma(0, 0) << "\n";
    if (!all_valid) log << "simulate: warning: mass within 5 sites of the window edge exceeds 1e-6\n";
    return json_path;
}

struct SpectralOutcome
{
    std::filesystem::path json;
    bool numerical_ok = true;
    bool gap_ok = true;
};

inline SpectralOutcome spectral(RunConfig const& c, std::ostream& log)
{
    SpectralOutcome res;
    HoppingKernel h = c.hopping();
    const int d = c.dim;
    log << "spectral: truncation R_x=" << c.trunc.pos_radius << " A_max=" << c.trunc.set_size
        << " R_A=" << c.trunc.set_radius << ", estimated dimension " << estimate_dimension(c.trunc, d) << "\n";
    CharacterBasis basis(c.trunc, d);
    SpectralOptions opt;
    opt.residual_tol = c.residual_tol;
    opt.solver_tol = c.solver_tol;
    opt.fd_step = c.fd_step;

    OutputSet out(c.output, "spectral");
    const std::string tag = run_tag(c);
    std::vector<std::string> warnings;

    SparseOperator L0 = build_L(basis, KVector{}, c.lambda, c.rate, h);
    auto ez = eigenvalue_near_zero(L0, basis, opt, true);
    if (!ez.converged) warnings.push_back("E(0): " + ez.diagnostics);
    auto dm = diffusion_matrix(basis, c.lambda, c.rate, h, opt);
    for (auto const& w : dm.warnings) warnings.push_back("D: " + w);

    Json deriv = nullptr;
    double hess_rel = NAN;
    Eigen::MatrixXd D_hess;
    try {
        auto dd = dispersion_derivatives(basis, c.lambda, c.rate, h, opt);
        D_hess = dd.half_hessian;
        hess_rel = (dd.half_hessian - dm.D).norm() / dm.D.norm();
        deriv = Json{{"gradient", std::vector<double>(dd.gradient.data(), dd.gradient.data() + d)},
                     {"gradient_norm", dd.gradient.norm()}, {"half_hessian", to_json(dd.half_hessian)},
                     {"step", dd.step}};
    } catch (std::runtime_error const& e) {
        warnings.push_back(std::string("dispersion derivatives: ") + e.what());
    }

    CsvTable disp({"dispersion", 1, {"k", "re_E", "im_E", "residual"}});
    for (int i = 0; i < c.k_points; ++i) {
        const double k = c.k_points == 1 ? 0.0 : c.k_max * i / (c.k_points - 1);
        KVector kv{};
        kv[0] = k;
        auto e = eigenvalue_near_zero(build_L(basis, kv, c.lambda, c.rate, h), basis, opt, false);
        if (!e.converged) {
            warnings.push_back("E(k=" + detail::fmt_double(k) + ") did not converge");
            continue;
        }
        disp.row({k, e.E.real(), e.E.imag(), e.residual});
    }

    const double hs = hopping_norm(h);
    auto gb = gap_delta_lambda(c.lambda, c.rate, hs);
    Json j{{"schema", "spectral_report/1"}, {"version", kVersion}, {"model", model_json(c)},
           {"truncation",
            {{"pos_radius", c.trunc.pos_radius}, {"set_size", c.trunc.set_size}, {"set_radius", c.trunc.set_radius},
             {"dimension", basis.size()}, {"clipped", L0.clipped}}},
           {"E0",
            {{"re", ez.E.real()}, {"im", ez.E.imag()}, {"residual", ez.residual}, {"exact_kernel", ez.exact_kernel},
             {"converged", ez.converged}}},
           {"second_eigenvalue",
            {{"found", ez.second_found}, {"re", ez.second.real()}, {"im", ez.second.imag()},
             {"residual", ez.second_residual}}},
           {"dispersion_derivatives", deriv},
           {"D",
            {{"matrix", to_json(dm.D)}, {"raw", to_json(dm.D_raw)}, {"min_eigenvalue", dm.min_eigenvalue},
             {"residuals", dm.residuals}, {"iterations", dm.iterations}, {"converged", dm.converged},
             {"positive_definite", dm.positive_definite}, {"flagged", dm.flagged},
             {"hessian_relative_difference", hess_rel}}},
           {"gap_bound", {{"delta_lambda", gb.delta}, {"small_lambda_coeff", gb.coeff}, {"hopping_sup", hs}}}};
    if (D_hess.size()) j["D"]["uncertainty"] = to_json((D_hess - dm.D).cwiseAbs());

    if (c.weak_coupling) {
        auto wc = weak_coupling_D0(basis, c.rate, h);
        for (auto const& w : wc.warnings) warnings.push_back("D0: " + w);
        j["D0"] = {{"matrix", to_json(wc.D0)}, {"condition", wc.condition}, {"min_real_part", wc.min_real_part},
                   {"flagged", wc.flagged},
                   {"relative_deviation", c.lambda > 0 && !wc.flagged ? (c.lambda * c.lambda * dm.D - wc.D0).norm() / wc.D0.norm() : NAN}};
    }

    CsvTable gaps({"gapscan", 1, {"doubled", "re", "im"}});
    if (c.gap_scan) {
        log << "spectral: gap sweep on the base and doubled truncations\n";
        auto gc = spectral_gap_check(c.trunc, d, c.lambda, c.rate, h, opt);
        for (auto const& w : gc.warnings) warnings.push_back("gap: " + w);
        for (auto const* s : {&gc.base, &gc.doubled})
            for (auto z : s->eigenvalues) gaps.row({s == &gc.doubled ? 1.0 : 0.0, z.real(), z.imag()});
        j["gap_check"] = {{"gap_observed", gc.base.gap_observed},
                          {"gap_doubled", gc.doubled.gap_observed},
                          {"drift", gc.drift},
                          {"delta_lambda", gc.delta_lambda},
                          {"above_bound", gc.above_bound},
                          {"zero_simple", gc.zero_simple},
                          {"max_abs_im", std::max(gc.base.max_abs_im, gc.doubled.max_abs_im)},
                          {"wedge", gc.wedge_bound},
                          {"wedge_ok", gc.wedge_ok},
                          {"covered", gc.base.covered && gc.doubled.covered},
                          {"pass", gc.pass}};
        res.gap_ok = gc.pass;
        out.write("gapscan_" + tag + ".csv", gaps);
    }
    j["warnings"] = warnings;

    const std::string disp_csv = "dispersion_" + tag + ".csv";
    out.write(disp_csv, disp);
    res.json = out.write("spectral_" + tag + ".json", j);
    out.write("plot_spectral.gp", plot_spectral(disp_csv, "gapscan_" + tag + ".csv", dm.D(0, 0)), "gnuplot");
    out.write_manifest(c);
    for (auto const& w : warnings) log << "spectral: warning: " << w << "\n";
    log << "spectral: D = " << dm.D(0, 0) << (dm.flagged ? " (flagged)" : "") << ", E(0) = " << ez.E.real() << "\n";
    res.numerical_ok = ez.converged && !dm.flagged;
    return res;
}

//---------------------------------------------------------------------------//
struct Comparison
{
    Json report;
    bool pass = false;
};

/// D from both Monte Carlo fitters against the spectral D; each diagonal entry
/// must agree within kCompareRelTol and every entry within kCompareSigmas joint sigma.
inline Comparison compare_reports(Json const& sim, Json const& spec)
{
    if (sim.value("schema", "") != "diffusion_estimate/1") throw UsageError("first input is not a diffusion estimate");
    if (spec.value("schema", "") != "spectral_report/1") throw UsageError("second input is not a spectral report");
    for (char const* key : {"dim", "kernel", "lambda", "rate"})
        if (sim["model"][key] != spec["model"][key])
            throw UsageError(std::string("model blocks differ in '") + key + "': " + sim["model"][key].dump() + " vs "
                             + spec["model"][key].dump());
    if (sim["model"]["lambda"].get<double>() == 0.0)
        throw UsageError("lambda = 0: the motion is ballistic, there is no diffusion matrix to compare");

    Eigen::MatrixXd Ds = matrix_from_json(spec["D"]["matrix"]);
    Eigen::MatrixXd Us = spec["D"].contains("uncertainty") ? matrix_from_json(spec["D"]["uncertainty"])
                                                           : Eigen::MatrixXd::Zero(Ds.rows(), Ds.cols());
    Comparison out;
    out.pass = !spec["D"]["flagged"].get<bool>();
    out.report = Json{{"schema", "comparison/1"}, {"version", kVersion}, {"model", sim["model"]},
                      {"D_spectral", spec["D"]["matrix"]}, {"rel_tol", kCompareRelTol}, {"sigmas", kCompareSigmas}};
    Json methods = Json::array();
    for (auto const& e : sim["estimates"]) {
        Eigen::MatrixXd Dm = matrix_from_json(e["D"]), Sm = matrix_from_json(e["sigma"]);
        bool ok = !e["flagged"].get<bool>() && Dm.rows() == Ds.rows();
        Json entries = Json::array();
        for (Eigen::Index a = 0; a < Ds.rows() && ok; ++a)
            for (Eigen::Index b = a; b < Ds.cols(); ++b) {
                const double diff = Dm(a, b) - Ds(a, b);
                const double sj = std::hypot(Sm(a, b), Us(a, b));
                const double z = std::abs(diff) / sj;
                const double rel = a == b ? std::abs(diff) / Ds(a, a) : NAN;
                const bool pass = std::isfinite(z) && z <= kCompareSigmas && (a != b || rel <= kCompareRelTol);
                ok &= pass;
                entries.push_back({{"i", a}, {"j", b}, {"mc", Dm(a, b)}, {"mc_sigma", Sm(a, b)}, {"spectral", Ds(a, b)},
                                   {"relative", rel}, {"joint_sigma", sj}, {"z", z}, {"pass", pass}});
            }
        methods.push_back({{"method", e["method"]}, {"entries", entries}, {"flagged", e["flagged"]}, {"pass", ok}});
        out.pass &= ok;
    }
    out.report["methods"] = methods;
    out.report["m2_exponent"] = sim["m2_exponent"];
    out.report["gaussian_shape"] = sim["gaussian_shape"];
    out.report["pass"] = out.pass;
    return out;
}

struct OracleOutcome
{
    bool pillet_pass = false;
    bool fiber_pass = false;
    double max_z = 0.0, max_se = 0.0, max_abs_diff = 0.0, fiber_max_diff = 0.0;
};

/// Monte Carlo E|psi_t(x)|^2 against the dense Pillet formula on a small ring,
/// and the two-sided vs fibered identity on a smaller one.
inline OracleOutcome oracle(RunConfig const& c, std::ostream& log)
{
    if (c.dim != 1) throw UsageError("oracle needs model.dim = 1");
    HoppingKernel h = c.hopping();
    const int L = c.oracle_side;
    detail::check_dense(L, fiber_dimension(L), kMaxFiberDim, "Pillet oracle");
    detail::check_dense(c.fiber_side, std::size_t(c.fiber_side) * std::size_t(c.fiber_side) << c.fiber_side,
                        kMaxTwoSidedDim, "fiber consistency");
    OutputSet out(c.output, "oracle");
    const std::string tag = run_tag(c);
    OracleOutcome res;

    Eigen::MatrixXcd rho0 = Eigen::MatrixXcd::Zero(L, L);
    rho0(0, 0) = 1.0;
    Eigen::VectorXd dense = pillet_oracle(L, h, c.lambda, c.rate, rho0, c.oracle_t);

    EnsembleSpec s;
    s.kernel = h;
    s.lambda = c.lambda;
    s.rate = c.rate;
    s.window = LatticeWindow(1, L);
    s.n_traj = c.oracle_n_traj;
    s.master_seed = c.seed;
    s.times = {c.oracle_t};
    s.threads = c.thread_count();
    s.tol.eps_step = c.eps_step;
    log << "oracle: " << s.n_traj << " trajectories on L=" << L << " at t=" << c.oracle_t << "\n";
    auto r = run_ensemble(s);

    CsvTable tab({"oracle", 1, {"x", "mc_mean", "mc_se", "dense", "z"}});
    const bool exact = c.oracle_t == 0.0;  // both sides are the initial point mass
    bool ok = true;
    for (int x = 0; x < L; ++x) {
        const double m = r.field.mean[0][std::size_t(x)], se = r.field.se[0][std::size_t(x)];
        const double diff = std::abs(m - dense(x));
        const double z = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : INFINITY);
        res.max_se = std::max(res.max_se, se);
        res.max_abs_diff = std::max(res.max_abs_diff, diff);
        if (std::isfinite(z)) res.max_z = std::max(res.max_z, z);
        ok &= exact ? diff <= 1e-12 : (z <= kCompareSigmas);
        tab.row({double(x), m, se, dense(x), std::isfinite(z) ? z : 1e300});
    }
    res.pillet_pass = ok && res.max_se <= kOracleMaxSE;

    const int Lf = c.fiber_side;
    Eigen::MatrixXcd rho_f = Eigen::MatrixXcd::Zero(Lf, Lf);
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(Lf);
    psi(0) = 0.8;
    psi(1 % Lf) += cplx(0.36, 0.48);
    rho_f = psi * psi.adjoint();
    auto fc = fiber_consistency(Lf, h, c.lambda, c.rate, rho_f, c.oracle_t);
    res.fiber_max_diff = fc.max_diff;
    res.fiber_pass = fc.max_diff <= kFiberTol;
    CsvTable ft({"fiber", 1, {"k", "two_sided_re", "two_sided_im", "fibered_re", "fibered_im", "abs_diff"}});
    for (std::size_t i = 0; i < fc.ks.size(); ++i)
        ft.row({fc.ks[i], fc.two_sided[i].real(), fc.two_sided[i].imag(), fc.fibered[i].real(), fc.fibered[i].imag(),
                std::abs(fc.two_sided[i] - fc.fibered[i])});

    Json j{{"schema", "oracle_report/1"}, {"version", kVersion}, {"model", model_json(c)},
           {"pillet",
            {{"side", L}, {"t", c.oracle_t}, {"n_traj", s.n_traj}, {"max_z", res.max_z}, {"max_se", res.max_se},
             {"max_abs_diff", res.max_abs_diff}, {"exact_branch", exact}, {"pass", res.pillet_pass}}},
           {"fiber_consistency", {{"side", Lf}, {"max_diff", fc.max_diff}, {"tol", kFiberTol}, {"pass", res.fiber_pass}}}};
    const std::string ocsv = "oracle_" + tag + ".csv";
    out.write(ocsv, tab);
    out.write("fiber_" + tag + ".csv", ft);
    out.write("oracle_" + tag + ".json", j);
    out.write("plot_oracle.gp", plot_oracle(ocsv), "gnuplot");
    out.write_manifest(c);
    log << "oracle: pillet max z " << res.max_z << ", max se " << res.max_se << (res.pillet_pass ? " pass" : " FAIL")
        << "; fiber max diff " << fc.max_diff << (res.fiber_pass ? " pass" : " FAIL") << "\n";
    return res;
}

//---------------------------------------------------------------------------//
struct CommandOptions
{
    std::string simulate_json, spectral_json;  // compare inputs; run fresh when empty
};

/// Dispatches one subcommand and maps failures to exit codes.
inline int run_command(std::string const& cmd, RunConfig const& c, CommandOptions const& opt, std::ostream& log,
                       std::ostream& err)
{
    try {
        if (cmd == "validate") {
            HoppingKernel h = c.hopping();
            const double est = estimate_dimension(c.trunc, c.dim);
            log << c.to_ini() << "\n# kernel terms " << h.terms.size() << ", |h|_1 " << h.l1() << ", sup |h^| "
                << hopping_norm(h) << "\n# spectral basis dimension estimate " << est << "\n";
            if (est > kMaxBasisDimension) {
                err << "spectral truncation would have " << est << " basis elements (limit " << kMaxBasisDimension << ")\n";
                return kExitValidation;
            }
            return kExitPass;
        }
        if (cmd == "simulate") {
            simulate(c, log);
            return kExitPass;
        }
        if (cmd == "spectral") {
            auto s = spectral(c, log);
            if (!s.numerical_ok) return kExitNumerical;
            return s.gap_ok ? kExitPass : kExitThreshold;
        }
        if (cmd == "oracle") {
            auto o = oracle(c, log);
            return o.pillet_pass && o.fiber_pass ? kExitPass : kExitThreshold;
        }
        if (cmd == "compare") {
            if (c.lambda == 0.0)
                throw UsageError("lambda = 0: the motion is ballistic, there is no diffusion matrix to compare");
            std::filesystem::path sim = opt.simulate_json, spec = opt.spectral_json;
            if (sim.empty()) sim = simulate(c, log);
            if (spec.empty()) {
                RunConfig sc = c;
                sc.gap_scan = false;
                auto s = spectral(sc, log);
                if (!s.numerical_ok) {
                    err << "compare: spectral D is flagged\n";
                    return kExitNumerical;
                }
                spec = s.json;
            }
            auto cmp = compare_reports(detail::read_json(sim), detail::read_json(spec));
            OutputSet out(c.output, "compare");
            out.write("compare_" + run_tag(c) + ".json", cmp.report);
            out.write_manifest(c);
            for (auto const& m : cmp.report["methods"])
                for (auto const& e : m["entries"])
                    log << "compare: " << m["method"].get<std::string>() << " D" << e["i"] << e["j"] << " mc "
                        << e["mc"].get<double>() << " +- " << e["mc_sigma"].get<double>() << " spectral "
                        << e["spectral"].get<double>() << " z " << e["z"].get<double>()
                        << (e["pass"].get<bool>() ? " pass" : " FAIL") << "\n";
            return cmp.pass ? kExitPass : kExitThreshold;
        }
        err << "unknown command '" << cmd << "'\n";
        return kExitValidation;
    } catch (ConfigError const& e) {
        err << "config error: " << e.what() << "\n";
        return kExitValidation;
    } catch (UsageError const& e) {
        err << cmd << ": " << e.what() << "\n";
        return kExitValidation;
    } catch (std::length_error const& e) {
        err << cmd << ": rejected: " << e.what() << "\n";
        return kExitValidation;
    } catch (std::invalid_argument const& e) {
        err << cmd << ": invalid input: " << e.what() << "\n";
        return kExitValidation;
    } catch (NormDriftError const& e) {
        err << cmd << ": numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (std::exception const& e) {
        err << cmd << ": numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
}

} // namespace flipdiff
