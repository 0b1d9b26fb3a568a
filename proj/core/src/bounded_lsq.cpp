#include "respilot/bounded_lsq.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <vector>

namespace respilot {

std::string_view to_string(SolverStatus status) {
    switch (status) {
        case SolverStatus::converged: return "converged";
        case SolverStatus::stalled: return "stalled";
        case SolverStatus::max_iterations: return "max_iterations";
        case SolverStatus::budget_exhausted: return "budget_exhausted";
    }
    return "unknown";
}

double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                               const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return (x - (x - g).cwiseMax(lo).cwiseMin(hi)).lpNorm<Eigen::Infinity>();
}

LsqResult solve_bounded_lsq(const ResidualFn& fn, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi, const LsqOptions& options) {
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    const auto out_of_time = [&] {
        return options.time_budget > 0.0 &&
               std::chrono::duration<double>(clock::now() - start).count() >= options.time_budget;
    };

    const Eigen::Index n = x0.size();
    LsqResult res;
    res.x = x0.cwiseMax(lo).cwiseMin(hi);

    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    fn(res.x, r, jac);
    res.cost = r.squaredNorm();

    Eigen::VectorXd r_try;
    Eigen::MatrixXd jac_try;
    double mu = 1e-3;
    std::vector<Eigen::Index> free;
    free.reserve(static_cast<std::size_t>(n));

    for (;;) {
        const Eigen::VectorXd grad = 2.0 * jac.transpose() * r;
        res.projected_grad_norm = projected_gradient_norm(res.x, grad, lo, hi);
        if (res.projected_grad_norm <= options.grad_tol) {
            res.status = SolverStatus::converged;
            return res;
        }
        if (res.iterations >= options.max_iters) {
            res.status = SolverStatus::max_iterations;
            return res;
        }
        if (out_of_time()) {
            res.status = SolverStatus::budget_exhausted;
            return res;
        }
        ++res.iterations;

        // Variables pinned at a bound with the gradient pushing outward stay fixed this step.
        free.clear();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double span = 1e-12 * (1.0 + std::abs(res.x[i]));
            const bool at_lo = res.x[i] <= lo[i] + span && grad[i] > 0.0;
            const bool at_hi = res.x[i] >= hi[i] - span && grad[i] < 0.0;
            if (!at_lo && !at_hi) free.push_back(i);
        }

        const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd jf(jac.rows(), nf);
        for (Eigen::Index k = 0; k < nf; ++k) jf.col(k) = jac.col(free[static_cast<std::size_t>(k)]);
        const Eigen::MatrixXd jtj = jf.transpose() * jf;
        const Eigen::VectorXd jtr = jf.transpose() * r;

        bool accepted = false;
        while (mu < 1e12) {
            Eigen::MatrixXd lhs = jtj;
            for (Eigen::Index k = 0; k < nf; ++k) lhs(k, k) += mu * (jtj(k, k) + 1e-9);
            const Eigen::VectorXd step = Eigen::LDLT<Eigen::MatrixXd>(lhs).solve(-jtr);

            Eigen::VectorXd x_try = res.x;
            for (Eigen::Index k = 0; k < nf; ++k) x_try[free[static_cast<std::size_t>(k)]] += step[k];
            x_try = x_try.cwiseMax(lo).cwiseMin(hi);

            // A projected step can be nearly orthogonal to the descent direction; fall back to
            // a projected gradient step of the same length in that case.
            fn(x_try, r_try, jac_try);
            double cost_try = r_try.squaredNorm();
            if (!(cost_try < res.cost) && step.allFinite()) {
                const double len = step.norm();
                const double gnorm = grad.norm();
                if (gnorm > 0.0) {
                    Eigen::VectorXd x_pg = (res.x - (len / gnorm) * grad).cwiseMax(lo).cwiseMin(hi);
                    Eigen::VectorXd r_pg;
                    Eigen::MatrixXd jac_pg;
                    fn(x_pg, r_pg, jac_pg);
                    if (r_pg.squaredNorm() < cost_try) {
                        x_try = std::move(x_pg);
                        r_try = std::move(r_pg);
                        jac_try = std::move(jac_pg);
                        cost_try = r_try.squaredNorm();
                    }
                }
            }

            if (cost_try < res.cost && std::isfinite(cost_try)) {
                res.x = std::move(x_try);
                r = r_try;
                jac = jac_try;
                res.cost = cost_try;
                mu = std::max(mu / 3.0, 1e-9);
                accepted = true;
                break;
            }
            mu *= 4.0;
            if (out_of_time()) break;
        }
        if (!accepted) {
            const Eigen::VectorXd g = 2.0 * jac.transpose() * r;
            res.projected_grad_norm = projected_gradient_norm(res.x, g, lo, hi);
            res.status = res.projected_grad_norm <= options.grad_tol ? SolverStatus::converged
                         : out_of_time()                              ? SolverStatus::budget_exhausted
                                                                      : SolverStatus::stalled;
            return res;
        }
    }
}

}  // namespace respilot
