#ifndef DPETS_TESTS_FD_ORACLE_HPP
#define DPETS_TESTS_FD_ORACLE_HPP

#include <cmath>
#include <functional>

#include <Eigen/Dense>

namespace dpets::testing {

// Central finite differences of a scalar function of a flat parameter vector.
inline Eigen::VectorXd central_differences(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& at, double step = 1e-5)
{
    Eigen::VectorXd g(at.size());
    Eigen::VectorXd x = at;
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        x[i] = at[i] + step;
        const double up = f(x);
        x[i] = at[i] - step;
        const double down = f(x);
        x[i] = at[i];
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

// Largest violation of |a - n| <= rel * max(|a|, |n|) + abs_floor, as a ratio
// (<= 1 means every entry passes).
inline double worst_gradient_ratio(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                                   double rel = 1e-4, double abs_floor = 1e-7)
{
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double tol = rel * std::max(std::abs(analytic[i]), std::abs(numeric[i])) + abs_floor;
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / tol);
    }
    return worst;
}

} // namespace dpets::testing

#endif
