// SPDX-License-Identifier: Apache-2.0
//
// Compensated sums, least squares and bootstrap helpers.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "philox.hpp"

namespace flipdiff {

/// Neumaier's variant of Kahan summation.
struct NeumaierSum
{
    double sum = 0.0;
    double comp = 0.0;

    void add(double x)
    {
        double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            comp += (sum - t) + x;
        else
            comp += (x - t) + sum;
        sum = t;
    }
    void add(NeumaierSum const& o)
    {
        add(o.sum);
        add(o.comp);
    }
    double value() const { return sum + comp; }
};

struct LinearFit
{
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double slope_se = 0.0;      // ordinary least-squares standard error
    double intercept_se = 0.0;
    std::size_t n = 0;
};

inline LinearFit fit_line(std::vector<double> const& x, std::vector<double> const& y)
{
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw std::invalid_argument("fit_line needs >= 2 paired points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_line: all abscissae equal");
    LinearFit f;
    f.n = n;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = y[i] - f.intercept - f.slope * x[i];
        ss_res += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    if (n > 2) {
        double s2 = ss_res / double(n - 2);
        f.slope_se = std::sqrt(s2 / sxx);
        f.intercept_se = std::sqrt(s2 * (1.0 / double(n) + mx * mx / sxx));
    }
    return f;
}

struct LeastSquares
{
    Eigen::VectorXd coef;
    double r2 = 0.0;
    double rss = 0.0;
};

/// Minimise |X c - y|; r2 is measured about the mean of y.
inline LeastSquares least_squares(Eigen::MatrixXd const& X, Eigen::VectorXd const& y)
{
    if (X.rows() != y.size() || X.rows() < X.cols())
        throw std::invalid_argument("least_squares: under-determined system");
    LeastSquares out;
    out.coef = X.colPivHouseholderQr().solve(y);
    Eigen::VectorXd res = y - X * out.coef;
    out.rss = res.squaredNorm();
    double tss = (y.array() - y.mean()).square().sum();
    out.r2 = tss > 0.0 ? 1.0 - out.rss / tss : 1.0;
    return out;
}

/// Trajectory indices of one bootstrap resample, drawn from its own stream.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed, std::size_t resample)
{
    auto rng = make_stream(seed, resample, StreamPurpose::bootstrap);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = std::size_t(rng.below(n));
    return idx;
}

inline constexpr std::size_t kBootstrapResamples = 200;

/// Sample covariance of the rows of `draws` (resamples x parameters).
inline Eigen::MatrixXd sample_covariance(Eigen::MatrixXd const& draws)
{
    if (draws.rows() < 2) return Eigen::MatrixXd::Constant(draws.cols(), draws.cols(),
                                                         std::numeric_limits<double>::quiet_NaN());
    Eigen::RowVectorXd mean = draws.colwise().mean();
    Eigen::MatrixXd c = draws.rowwise() - mean;
    return c.transpose() * c / double(draws.rows() - 1);
}

} // namespace flipdiff
