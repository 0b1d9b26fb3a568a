#include "respilot/hkvm.hpp"

#include "respilot/errors.hpp"

#include <cmath>
#include <limits>

namespace respilot {

void HkvmParams::validate() const {
    if (!(beta > 0.0)) throw InvalidInput("hkvm: beta must be > 0");
    if (!(gamma >= 0.0)) throw InvalidInput("hkvm: gamma must be >= 0");
    if (!(time_budget > 0.0)) throw InvalidInput("hkvm: time_budget must be > 0");
    if (max_iters < 1) throw InvalidInput("hkvm: max_iters must be >= 1");
    if (!(grad_tol > 0.0)) throw InvalidInput("hkvm: grad_tol must be > 0");
}

double hkvm_objective(const HandModel& robot, const HandModel& human, const JointConfig& q_o,
                      const JointConfig& q_h, const HkvmParams& params, const KeypointVectorSpec& spec) {
    robot.check_config(q_o, "robot config");
    human.check_config(q_h, "human config");
    const auto rp = forward_kinematics(robot, q_o);
    const auto hp = forward_kinematics(human, q_h);
    double total = 0.0;
    for (const auto& p : spec.pairs) {
        const Eigen::Vector3d rv = rp[static_cast<std::size_t>(p.to)] - rp[static_cast<std::size_t>(p.from)];
        const Eigen::Vector3d hv = hp[static_cast<std::size_t>(p.to)] - hp[static_cast<std::size_t>(p.from)];
        total += (rv - params.beta * hv).squaredNorm();
    }
    return total + params.gamma * q_o.squaredNorm();
}

HkvmSolver::HkvmSolver(const HandModel& human, const HandModel& robot, KeypointVectorSpec spec,
                       HkvmParams params)
    : human_(&human), robot_(&robot), spec_(std::move(spec)), params_(params) {
    params_.validate();
    validate_keypoint_spec(robot, spec_);
    validate_keypoint_spec(human, spec_);
    if (human.keypoint_ids() != robot.keypoint_ids())
        throw InvalidInput("hkvm: human and robot models expose different keypoints");
}

Eigen::VectorXd HkvmSolver::targets(const JointConfig& q_h) const {
    human_->check_config(q_h, "human config");
    const auto hp = forward_kinematics(*human_, q_h);
    Eigen::VectorXd t(3 * spec_.size());
    for (int i = 0; i < spec_.size(); ++i) {
        const auto& p = spec_.pairs[static_cast<std::size_t>(i)];
        t.segment<3>(3 * i) =
            params_.beta * (hp[static_cast<std::size_t>(p.to)] - hp[static_cast<std::size_t>(p.from)]);
    }
    return t;
}

void HkvmSolver::residual(const JointConfig& q_o, const Eigen::VectorXd& targets, Eigen::VectorXd& r,
                          Eigen::MatrixXd* jac) const {
    const HandModel& robot = *robot_;
    const int n = robot.dof();
    const int h = spec_.size();
    const int fingers = robot.finger_count();

    std::vector<Eigen::Vector3d> tip(static_cast<std::size_t>(fingers));
    std::vector<Eigen::Matrix3Xd> tip_jac(static_cast<std::size_t>(fingers));
    for (int f = 0; f < fingers; ++f)
        fingertip_kinematics(robot, q_o, f, tip[static_cast<std::size_t>(f)], tip_jac[static_cast<std::size_t>(f)]);

    const double sg = std::sqrt(params_.gamma);
    r.resize(3 * h + n);
    if (jac) jac->setZero(3 * h + n, n);
    for (int i = 0; i < h; ++i) {
        const auto& p = spec_.pairs[static_cast<std::size_t>(i)];
        Eigen::Vector3d v = Eigen::Vector3d::Zero();
        if (p.to > 0) v += tip[static_cast<std::size_t>(p.to - 1)];
        if (p.from > 0) v -= tip[static_cast<std::size_t>(p.from - 1)];
        r.segment<3>(3 * i) = v - targets.segment<3>(3 * i);
        if (jac) {
            if (p.to > 0) {
                const FingerSlice s = robot.slice(p.to - 1);
                jac->block(3 * i, s.offset, 3, s.count) += tip_jac[static_cast<std::size_t>(p.to - 1)];
            }
            if (p.from > 0) {
                const FingerSlice s = robot.slice(p.from - 1);
                jac->block(3 * i, s.offset, 3, s.count) -= tip_jac[static_cast<std::size_t>(p.from - 1)];
            }
        }
    }
    r.tail(n) = sg * q_o;
    if (jac) jac->bottomRows(n).diagonal().setConstant(sg);
}

double HkvmSolver::objective(const JointConfig& q_o, const JointConfig& q_h) const {
    robot_->check_config(q_o, "robot config");
    Eigen::VectorXd r;
    residual(q_o, targets(q_h), r, nullptr);
    return r.squaredNorm();
}

double HkvmSolver::objective_and_gradient(const JointConfig& q_o, const JointConfig& q_h,
                                          Eigen::VectorXd& grad) const {
    robot_->check_config(q_o, "robot config");
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    residual(q_o, targets(q_h), r, &jac);
    grad = 2.0 * jac.transpose() * r;
    return r.squaredNorm();
}

HkvmSolution HkvmSolver::solve(const JointConfig& q_h, const WarmStart& warm) const {
    const Eigen::VectorXd t = targets(q_h);
    JointConfig start = JointConfig::Zero(robot_->dof());
    if (warm.last_solution) {
        robot_->check_config(*warm.last_solution, "warm start");
        start = *warm.last_solution;
    }
    const ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
        residual(x, t, r, &jac);
    };
    LsqOptions opts;
    opts.max_iters = params_.max_iters;
    opts.grad_tol = params_.grad_tol;
    opts.time_budget = params_.time_budget;
    const LsqResult res = solve_bounded_lsq(fn, start, robot_->lower(), robot_->upper(), opts);
    return {res.x, res.cost, res.projected_grad_norm, res.iterations, res.status};
}

HkvmSolver HkvmSolver::unbudgeted() const {
    HkvmParams p = params_;
    p.time_budget = std::numeric_limits<double>::infinity();
    return HkvmSolver(*human_, *robot_, spec_, p);
}

}  // namespace respilot
