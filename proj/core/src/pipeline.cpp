#include "respilot/pipeline.hpp"

#include "respilot/errors.hpp"
#include "respilot/fingertip_ik.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>

namespace respilot {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

constexpr std::array<std::pair<RetargeterKind, std::string_view>, 5> kKindNames{{
    {RetargeterKind::joint, "joint"},
    {RetargeterKind::ik, "ik"},
    {RetargeterKind::hkvm, "hkvm"},
    {RetargeterKind::gp_direct, "gp_direct"},
    {RetargeterKind::res_gp, "res_gp"},
}};

void check_gp_cover(const HandModel& robot, const std::vector<TrainedFingerGP>& gps, std::string_view what) {
    if (static_cast<int>(gps.size()) != robot.finger_count())
        throw InvalidInput(std::string(what) + ": one GP per finger required");
}

}  // namespace

std::string_view to_string(RetargeterKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

RetargeterKind parse_retargeter_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw InvalidInput("unknown retargeter '" + std::string(name) + "' (expected joint, ik, hkvm, gp_direct or res_gp)");
}

std::vector<RetargeterKind> all_retargeter_kinds() {
    std::vector<RetargeterKind> out;
    for (const auto& entry : kKindNames) out.push_back(entry.first);
    return out;
}

bool needs_bundle(RetargeterKind kind) { return kind == RetargeterKind::res_gp || kind == RetargeterKind::gp_direct; }

// --- stages ----------------------------------------------------------------------------------

namespace {

ResidualCorrection correct(const HandModel& human, const HandModel& robot, const JointConfig& q_h,
                           const JointConfig& fallback, const std::vector<TrainedFingerGP>& gps, bool residual,
                           StageTimings* timings) {
    const int fingers = robot.finger_count();
    std::vector<AngleMatrix> rows(static_cast<std::size_t>(fingers));
    const auto t0 = clock_type::now();
    for (int f = 0; f < fingers; ++f) {
        const FingerSlice hs = human.slice(f);
        rows[static_cast<std::size_t>(f)] = gps[static_cast<std::size_t>(f)].posterior_mean(q_h.segment(hs.offset, hs.count));
    }
    const auto t1 = clock_type::now();

    ResidualCorrection out;
    out.q_d = fallback;
    for (int f = 0; f < fingers; ++f) {
        const FingerSlice rs = robot.slice(f);
        AngleMatrix m = rows[static_cast<std::size_t>(f)];
        if (m.rows() != rs.count) throw InvalidInput("GP output size does not match the robot finger");
        if (residual) m += v_map(fallback.segment(rs.offset, rs.count));
        try {
            out.q_d.segment(rs.offset, rs.count) = angle_map(m);
        } catch (const DegenerateRowError&) {
            out.degenerate_fingers.push_back(f);
        }
    }
    out.q_d = clamp_to_limits(robot, out.q_d);
    if (timings) {
        timings->residual += std::chrono::duration<double>(t1 - t0).count();
        timings->reconstruct += seconds_since(t1);
    }
    return out;
}

}  // namespace

ResidualCorrection apply_residual(const HandModel& human, const HandModel& robot, const JointConfig& q_h,
                                  const JointConfig& q_o, const std::vector<TrainedFingerGP>& gps) {
    human.check_config(q_h, "human config");
    robot.check_config(q_o, "base config");
    check_gp_cover(robot, gps, "apply_residual");
    return correct(human, robot, q_h, q_o, gps, true, nullptr);
}

ResidualCorrection retarget_gp_direct(const HandModel& human, const HandModel& robot, const JointConfig& q_h,
                                      const std::vector<TrainedFingerGP>& direct_gps, const JointConfig& fallback) {
    human.check_config(q_h, "human config");
    robot.check_config(fallback, "fallback config");
    check_gp_cover(robot, direct_gps, "retarget_gp_direct");
    return correct(human, robot, q_h, fallback, direct_gps, false, nullptr);
}

ConstraintResult solve_constraints(const HandModel& robot, const JointConfig& q_d, const std::vector<int>& fingers,
                                   double d, const ConstraintOptions& options) {
    robot.check_config(q_d, "q_d");
    ConstraintResult out;
    out.q_c = q_d;
    if (fingers.empty()) return out;
    if (!(d > 0.0)) throw InvalidInput("constraint distance must be > 0");
    for (int f : fingers)
        if (f == kThumbFinger || f < 0 || f >= robot.finger_count())
            throw InvalidInput("constraints pair the thumb with another finger; got finger " + std::to_string(f));

    const int n = robot.dof();
    const int k = static_cast<int>(fingers.size());
    const FingerSlice ts = robot.slice(kThumbFinger);

    // c_i(q) = ||tip_f - tip_thumb|| - d and its gradient.
    auto constraint_values = [&](const Eigen::VectorXd& q, Eigen::VectorXd& c, Eigen::MatrixXd* jac) {
        c.resize(k);
        if (jac) jac->setZero(k, n);
        Eigen::Vector3d pt;
        Eigen::Matrix3Xd jt;
        fingertip_kinematics(robot, q, kThumbFinger, pt, jt);
        for (int i = 0; i < k; ++i) {
            const int f = fingers[static_cast<std::size_t>(i)];
            Eigen::Vector3d pf;
            Eigen::Matrix3Xd jf;
            fingertip_kinematics(robot, q, f, pf, jf);
            const Eigen::Vector3d diff = pf - pt;
            const double dist = diff.norm();
            c[i] = dist - d;
            if (!jac) continue;
            const Eigen::Vector3d u = dist > 1e-12 ? Eigen::Vector3d(diff / dist) : Eigen::Vector3d::UnitX();
            const FingerSlice fs = robot.slice(f);
            jac->block(i, fs.offset, 1, fs.count) += u.transpose() * jf;
            jac->block(i, ts.offset, 1, ts.count) -= u.transpose() * jt;
        }
    };

    const auto t0 = clock_type::now();
    auto remaining = [&] { return options.time_budget > 0.0 ? options.time_budget - seconds_since(t0) : 0.0; };

    // Augmented Lagrangian: minimize ||q - q_d||^2 + sum (mu/2) (c_i + lambda_i/mu)^2 over
    // the box, then update lambda += mu c and grow mu when the violation stalls.
    auto run = [&](Eigen::VectorXd x, double mu, int& outer_used) {
        Eigen::VectorXd lambda = Eigen::VectorXd::Zero(k);
        Eigen::VectorXd c;
        constraint_values(x, c, nullptr);
        double prev_violation = c.cwiseAbs().maxCoeff();
        for (int outer = 0; outer < options.max_outer; ++outer) {
            outer_used = outer + 1;
            const double scale = std::sqrt(0.5 * mu);
            const Eigen::VectorXd shift = lambda / mu;
            const ResidualFn fn = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
                Eigen::VectorXd cv;
                Eigen::MatrixXd cj;
                constraint_values(q, cv, &cj);
                r.resize(n + k);
                r.head(n) = q - q_d;
                r.tail(k) = scale * (cv + shift);
                jac.setZero(n + k, n);
                jac.topRows(n).setIdentity();
                jac.bottomRows(k) = scale * cj;
            };
            LsqOptions inner;
            inner.max_iters = 100;
            inner.grad_tol = 1e-10;
            inner.time_budget = 0.0;
            if (options.time_budget > 0.0) {
                inner.time_budget = remaining();
                if (inner.time_budget <= 0.0) break;
            }
            x = solve_bounded_lsq(fn, x, robot.lower(), robot.upper(), inner).x;
            constraint_values(x, c, nullptr);
            const double violation = c.cwiseAbs().maxCoeff();
            lambda += mu * c;
            if (violation <= options.target_tolerance) break;
            if (violation > 0.25 * prev_violation) mu = std::min(mu * 10.0, 1e12);
            prev_violation = violation;
        }
        return x;
    };
    auto violation_of = [&](const Eigen::VectorXd& q) {
        Eigen::VectorXd c;
        constraint_values(q, c, nullptr);
        return c.cwiseAbs().maxCoeff();
    };

    // Pure feasibility, min sum c_i^2, used to leave a basin where the tips cannot meet.
    auto feasibility = [&](const Eigen::VectorXd& start) {
        const ResidualFn fn = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
            constraint_values(q, r, &jac);
        };
        LsqOptions o;
        o.max_iters = 200;
        o.grad_tol = 1e-12;
        o.time_budget = options.time_budget > 0.0 ? std::max(remaining(), 1e-9) : 0.0;
        return solve_bounded_lsq(fn, start, robot.lower(), robot.upper(), o).x;
    };

    Eigen::VectorXd x = run(q_d, 1e3, out.outer_iterations);
    double best_violation = violation_of(x);
    if (best_violation > options.tolerance) {
        // The warm start sits in a basin where the tips cannot meet. Restart with the
        // involved fingers at fixed fractions of their ranges and keep the feasible
        // candidate nearest to q_d (or the least violating one if none is feasible).
        std::vector<int> involved = fingers;
        involved.push_back(kThumbFinger);
        double best_distance = std::numeric_limits<double>::infinity();
        bool have_feasible = false;
        for (double frac : {0.5, 0.3, 0.7, 0.15, 0.85}) {
            if (options.time_budget > 0.0 && remaining() <= 0.0) break;
            Eigen::VectorXd start = q_d;
            for (int f : involved) {
                const FingerSlice fs = robot.slice(f);
                start.segment(fs.offset, fs.count) =
                    robot.lower().segment(fs.offset, fs.count) +
                    frac * (robot.upper() - robot.lower()).segment(fs.offset, fs.count);
            }
            int used = 0;
            const Eigen::VectorXd cand = run(feasibility(start), 1e6, used);
            out.outer_iterations += used;
            const double v = violation_of(cand);
            const double dist = (cand - q_d).norm();
            const bool feasible = v <= options.tolerance;
            if ((feasible && (!have_feasible || dist < best_distance)) || (!have_feasible && !feasible && v < best_violation)) {
                x = cand;
                best_violation = v;
                if (feasible) {
                    have_feasible = true;
                    best_distance = dist;
                }
            }
        }
    }

    Eigen::VectorXd c;
    out.q_c = x;
    constraint_values(x, c, nullptr);
    for (int i = 0; i < k; ++i) {
        ConstraintReport r;
        r.finger = fingers[static_cast<std::size_t>(i)];
        r.distance = c[i] + d;
        r.violation = std::abs(c[i]);
        r.satisfied = r.violation <= options.tolerance;
        out.feasible = out.feasible && r.satisfied;
        out.constraints.push_back(r);
    }
    return out;
}

JointConfig smooth(const JointConfig& previous, const JointConfig& q_c, double lambda) {
    if (previous.size() != q_c.size()) throw InvalidInput("smooth: filter state and input differ in length");
    return lambda * q_c + (1.0 - lambda) * previous;
}

JointMapResult retarget_joint(const JointConfig& q_h, const Eigen::VectorXd& human_lo, const Eigen::VectorXd& human_hi,
                              const Eigen::VectorXd& robot_lo, const Eigen::VectorXd& robot_hi) {
    const Eigen::Index n = q_h.size();
    if (human_lo.size() != n || human_hi.size() != n || robot_lo.size() != n || robot_hi.size() != n)
        throw InvalidInput("retarget_joint: human and robot must have the same joint count");
    JointMapResult out;
    out.q.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double width = human_hi[j] - human_lo[j];
        if (!(width > 0.0)) {
            out.q[j] = 0.5 * (robot_lo[j] + robot_hi[j]);
            out.zero_width_joints.push_back(static_cast<int>(j));
            continue;
        }
        const double t = (q_h[j] - human_lo[j]) / width;
        out.q[j] = std::clamp(robot_lo[j] + t * (robot_hi[j] - robot_lo[j]), robot_lo[j], robot_hi[j]);
    }
    return out;
}

IkRetargetResult retarget_ik(const HandModel& human, const HandModel& robot, const JointConfig& q_h,
                             const JointConfig& q_init, const LsqOptions& options) {
    human.check_config(q_h, "human config");
    robot.check_config(q_init, "IK start");
    if (human.finger_count() != robot.finger_count()) throw InvalidInput("retarget_ik: finger counts differ");
    IkRetargetResult out;
    out.q = clamp_to_limits(robot, q_init);
    out.position_error.resize(robot.finger_count());
    for (int f = 0; f < robot.finger_count(); ++f) {
        const Eigen::Vector3d target = fingertip_position(human, q_h, f);
        const FingertipIkResult r = solve_fingertip_ik(robot, out.q, f, target, options);
        out.q = r.q;
        out.position_error[f] = r.position_error;
        if (r.position_error > 1e-3) out.unreachable_fingers.push_back(f);
    }
    return out;
}

// --- context and session ---------------------------------------------------------------------

RetargetContext::RetargetContext(HandModel human, HandModel robot, std::optional<CalibrationBundle> bundle,
                                 std::optional<KeypointVectorSpec> spec)
    : human_(std::move(human)), robot_(std::move(robot)), bundle_(std::move(bundle)) {
    if (human_.finger_count() != robot_.finger_count())
        throw ValidationError("human and robot models have different finger counts");
    if (spec) {
        spec_ = *spec;
    } else if (bundle_) {
        spec_ = bundle_keypoint_spec(*bundle_, robot_);
    } else {
        spec_ = KeypointVectorSpec::default_for(robot_);
    }
    validate_keypoint_spec(robot_, spec_);
    validate_keypoint_spec(human_, spec_);
    range_lo_ = human_.lower();
    range_hi_ = human_.upper();
    if (bundle_) {
        validate_bundle(*bundle_, human_, robot_);
        if (!(bundle_->human_model == ModelRef::of(human_)))
            warnings_.push_back("bundle was calibrated against a different human model (" + bundle_->human_model.name +
                                ", hash " + bundle_->human_model.hash + ")");
        if (!(bundle_->robot_model == ModelRef::of(robot_)))
            warnings_.push_back("bundle was calibrated against a different robot model (" + bundle_->robot_model.name +
                                ", hash " + bundle_->robot_model.hash + ")");
        range_lo_ = bundle_->human_range_lo;
        range_hi_ = bundle_->human_range_hi;
    }
}

HkvmParams RetargetContext::default_hkvm() const { return bundle_ ? bundle_->hkvm : HkvmParams{}; }

void SessionConfig::validate() const {
    if (!(smoothing > 0.0 && smoothing <= 1.0)) throw InvalidInput("smoothing coefficient must be in (0, 1]");
    if (!(distance > 0.0)) throw InvalidInput("constraint distance must be > 0");
    if (!(constraint.tolerance > 0.0)) throw InvalidInput("constraint tolerance must be > 0");
    hkvm.validate();
}

RetargetSession::RetargetSession(std::shared_ptr<const RetargetContext> context, SessionConfig config)
    : context_(std::move(context)) {
    if (!context_) throw InvalidInput("session needs a context");
    set_config(config);
    reset();
}

void RetargetSession::set_config(const SessionConfig& config) {
    config.validate();
    if (needs_bundle(config.kind)) {
        const CalibrationBundle* b = context_->bundle();
        if (!b) throw InvalidInput("retargeter '" + std::string(to_string(config.kind)) + "' needs a calibration bundle");
        if (config.kind == RetargeterKind::gp_direct && !b->has_direct())
            throw InvalidInput("the calibration bundle has no direct-GP models");
    }
    config_ = config;
    solver_ = std::make_unique<HkvmSolver>(context_->human(), context_->robot(), context_->spec(), config_.hkvm);
}

void RetargetSession::set_kind(RetargeterKind kind) {
    SessionConfig c = config_;
    c.kind = kind;
    set_config(c);
}

void RetargetSession::set_constraint(int finger, bool on) {
    const HandModel& robot = context_->robot();
    if (finger == kThumbFinger || finger < 0 || finger >= robot.finger_count())
        throw InvalidInput("constraints pair the thumb with another finger; got finger " + std::to_string(finger));
    auto it = std::find(constrained_.begin(), constrained_.end(), finger);
    if (on && it == constrained_.end()) {
        constrained_.push_back(finger);
        std::sort(constrained_.begin(), constrained_.end());
    } else if (!on && it != constrained_.end()) {
        constrained_.erase(it);
    }
}

void RetargetSession::reset() {
    hkvm_warm_ = {};
    ik_warm_.reset();
    last_q_d_.reset();
    filter_ = JointConfig::Zero(context_->robot().dof());
}

RetargetResult RetargetSession::step(const JointConfig& q_h) {
    const HandModel& human = context_->human();
    const HandModel& robot = context_->robot();
    human.check_config(q_h, "human config");

    const auto t_start = clock_type::now();
    RetargetResult out;

    switch (config_.kind) {
    case RetargeterKind::hkvm:
    case RetargeterKind::res_gp: {
        const HkvmSolution sol = solver_->solve(q_h, hkvm_warm_);
        hkvm_warm_.last_solution = sol.q;
        out.q_base = sol.q;
        out.base_status = sol.status;
        out.timings.base = seconds_since(t_start);
        if (config_.kind == RetargeterKind::res_gp) {
            ResidualCorrection rc = correct(human, robot, q_h, sol.q, context_->bundle()->residual, true, &out.timings);
            out.q_d = std::move(rc.q_d);
            out.degenerate_fingers = std::move(rc.degenerate_fingers);
        } else {
            out.q_d = sol.q;
        }
        break;
    }
    case RetargeterKind::joint: {
        JointMapResult r = retarget_joint(q_h, context_->human_range_lo(), context_->human_range_hi(), robot.lower(),
                                          robot.upper());
        out.q_base = r.q;
        out.q_d = r.q;
        out.zero_width_joints = std::move(r.zero_width_joints);
        out.timings.base = seconds_since(t_start);
        break;
    }
    case RetargeterKind::ik: {
        const JointConfig init =
            (config_.ik_cold_start || !ik_warm_) ? JointConfig(JointConfig::Zero(robot.dof())) : *ik_warm_;
        LsqOptions opts;
        opts.time_budget = config_.hkvm.time_budget;
        IkRetargetResult r = retarget_ik(human, robot, q_h, init, opts);
        ik_warm_ = r.q;
        out.q_base = r.q;
        out.q_d = r.q;
        out.unreachable_fingers = std::move(r.unreachable_fingers);
        out.timings.base = seconds_since(t_start);
        break;
    }
    case RetargeterKind::gp_direct: {
        const JointConfig fallback = last_q_d_ ? *last_q_d_ : JointConfig(0.5 * (robot.lower() + robot.upper()));
        ResidualCorrection rc = correct(human, robot, q_h, fallback, context_->bundle()->direct, false, &out.timings);
        out.q_base = rc.q_d;
        out.q_d = std::move(rc.q_d);
        out.degenerate_fingers = std::move(rc.degenerate_fingers);
        break;
    }
    }
    last_q_d_ = out.q_d;

    const auto t_constraint = clock_type::now();
    ConstraintResult cr = solve_constraints(robot, out.q_d, constrained_, config_.distance, config_.constraint);
    out.q_c = std::move(cr.q_c);
    out.constraints = std::move(cr.constraints);
    out.constraints_feasible = cr.feasible;
    out.timings.constraint = seconds_since(t_constraint);

    const auto t_smooth = clock_type::now();
    filter_ = smooth(filter_, out.q_c, config_.smoothing);
    out.q_target = filter_;
    out.timings.smoothing = seconds_since(t_smooth);
    out.timings.total = seconds_since(t_start);
    return out;
}

}  // namespace respilot
