#pragma once

#include "respilot/bounded_lsq.hpp"
#include "respilot/hand_model.hpp"

namespace respilot {

struct FingertipIkResult {
    JointConfig q;            // full hand config; only the finger's slice changed
    double position_error = 0.0;  // m, distance from fingertip to target at the result
    SolverStatus status = SolverStatus::converged;
};

/// Position-only IK for one finger, started from `q_init` (clamped to limits). Joints of
/// other fingers are left untouched. Unreachable targets return the closest local solution.
FingertipIkResult solve_fingertip_ik(const HandModel& model, const JointConfig& q_init, int finger,
                                     const Eigen::Vector3d& target, const LsqOptions& options = {});

}  // namespace respilot
