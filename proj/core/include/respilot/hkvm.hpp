#pragma once

#include "respilot/bounded_lsq.hpp"
#include "respilot/hand_model.hpp"

#include <optional>

namespace respilot {

struct HkvmParams {
    double beta = 1.6;   // human-to-robot size scale
    double gamma = 0.0025;  // pull toward the open (zero) hand
    double time_budget = 0.1;  // seconds
    int max_iters = 200;
    double grad_tol = 1e-6;

    /// Throws InvalidInput when beta <= 0, gamma < 0 or time_budget <= 0.
    void validate() const;
};

struct WarmStart {
    std::optional<JointConfig> last_solution;
};

struct HkvmSolution {
    JointConfig q;
    double objective = 0.0;
    double projected_grad_norm = 0.0;
    int iterations = 0;
    SolverStatus status = SolverStatus::converged;
};

/// Sum over keypoint vectors of ||r_i(q_o) - beta * h_i(q_h)||^2 plus gamma * ||q_o||^2.
double hkvm_objective(const HandModel& robot, const HandModel& human, const JointConfig& q_o,
                      const JointConfig& q_h, const HkvmParams& params, const KeypointVectorSpec& spec);

/// Keypoint-vector matching retargeter. Both hands must expose the same keypoint ids used
/// by `spec` (the spec is resolved against the robot model and reused for the human).
class HkvmSolver {
public:
    HkvmSolver(const HandModel& human, const HandModel& robot, KeypointVectorSpec spec, HkvmParams params);

    const HandModel& human() const { return *human_; }
    const HandModel& robot() const { return *robot_; }
    const KeypointVectorSpec& spec() const { return spec_; }
    const HkvmParams& params() const { return params_; }

    /// beta-scaled human keypoint vectors, stacked 3 per pair.
    Eigen::VectorXd targets(const JointConfig& q_h) const;

    double objective(const JointConfig& q_o, const JointConfig& q_h) const;
    /// Objective and its analytic gradient with respect to q_o.
    double objective_and_gradient(const JointConfig& q_o, const JointConfig& q_h, Eigen::VectorXd& grad) const;

    /// Local solve started at the warm start (zero configuration when absent), clamped into
    /// the robot limits. Never throws on budget exhaustion; the status says why it stopped.
    HkvmSolution solve(const JointConfig& q_h, const WarmStart& warm) const;

    /// Copy without the wall-clock budget, so results depend only on the inputs and the
    /// iteration cap. Used wherever outputs are persisted (labels, fixtures).
    HkvmSolver unbudgeted() const;

private:
    void residual(const JointConfig& q_o, const Eigen::VectorXd& targets, Eigen::VectorXd& r,
                  Eigen::MatrixXd* jac) const;

    const HandModel* human_;
    const HandModel* robot_;
    KeypointVectorSpec spec_;
    HkvmParams params_;
};

}  // namespace respilot
