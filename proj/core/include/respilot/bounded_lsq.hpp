#pragma once

#include <Eigen/Core>

#include <functional>
#include <string_view>

namespace respilot {

enum class SolverStatus {
    converged,         // projected gradient below tolerance
    stalled,           // no further decrease possible at machine precision
    max_iterations,
    budget_exhausted,  // wall-clock budget used up; result is best-so-far
};

std::string_view to_string(SolverStatus status);

struct LsqOptions {
    int max_iters = 200;
    double grad_tol = 1e-6;
    double time_budget = 0.1;  // seconds; <= 0 disables the clock
};

struct LsqResult {
    Eigen::VectorXd x;
    double cost = 0.0;  // squared residual norm at x
    double projected_grad_norm = 0.0;
    int iterations = 0;
    SolverStatus status = SolverStatus::converged;
};

/// Fills the residual vector and its Jacobian at x.
using ResidualFn = std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& residual,
                                      Eigen::MatrixXd& jacobian)>;

/// Minimizes ||residual(x)||^2 over the box [lo, hi] with a projected Levenberg-Marquardt
/// method. The start point is clamped into the box; every accepted step strictly decreases
/// the cost, so the result is never worse than the (clamped) start.
LsqResult solve_bounded_lsq(const ResidualFn& fn, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi, const LsqOptions& options);

/// Infinity norm of x - clamp(x - g), the first-order stationarity measure on a box.
double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                               const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

}  // namespace respilot
