#include "respilot/fingertip_ik.hpp"

namespace respilot {

FingertipIkResult solve_fingertip_ik(const HandModel& model, const JointConfig& q_init, int finger,
                                     const Eigen::Vector3d& target, const LsqOptions& options) {
    model.check_config(q_init, "ik start");
    const FingerSlice s = model.slice(finger);
    JointConfig work = clamp_to_limits(model, q_init);

    const ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
        work.segment(s.offset, s.count) = x;
        Eigen::Vector3d p;
        Eigen::Matrix3Xd j;
        fingertip_kinematics(model, work, finger, p, j);
        r = p - target;
        jac = j;
    };
    const LsqResult res = solve_bounded_lsq(fn, work.segment(s.offset, s.count),
                                            model.lower().segment(s.offset, s.count),
                                            model.upper().segment(s.offset, s.count), options);
    FingertipIkResult out;
    out.q = clamp_to_limits(model, q_init);
    out.q.segment(s.offset, s.count) = res.x;
    out.position_error = std::sqrt(res.cost);
    out.status = res.status;
    return out;
}

}  // namespace respilot
