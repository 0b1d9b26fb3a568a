#include "oracles.hpp"
#include "support.hpp"

#include "respilot/bundle.hpp"
#include "respilot/calibration.hpp"
#include "respilot/errors.hpp"
#include "respilot/fingertip_ik.hpp"
#include "respilot/pipeline.hpp"

#include <doctest.h>

using namespace respilot;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

HkvmParams unbudgeted() {
    HkvmParams p;
    p.time_budget = kInf;
    return p;
}

// Shared calibrated context on the shipped fixture (fewer epochs keep the suite quick).
std::shared_ptr<const RetargetContext> calibrated_context(bool null_residual, int epochs = 3000) {
    HandModel human = rtest::human_model();
    HandModel robot = rtest::robot_model();
    const HkvmSolver solver(human, robot, KeypointVectorSpec::default_for(robot), unbudgeted());
    CalibrationDataset ds =
        null_residual ? generate_synthetic_calibration(0, human, robot, hkvm_warp(solver))
                      : load_dataset(rtest::data_path("synthetic/calibration.json"), human, robot).dataset;
    CalibrationOptions opts;
    opts.gp.epochs = epochs;
    CalibrationBundle b = calibrate(ds, solver, opts);
    return std::make_shared<const RetargetContext>(std::move(human), std::move(robot), std::move(b));
}

SessionConfig batch_config(RetargeterKind kind) {
    SessionConfig c;
    c.kind = kind;
    c.hkvm = unbudgeted();
    c.constraint.time_budget = 0.0;
    return c;
}

}  // namespace

TEST_CASE("constraint projection: identity and feasible start") {
    const HandModel robot = rtest::robot_model();
    Rng rng(31);
    const JointConfig q = rtest::uniform_in(robot.lower(), robot.upper(), rng);
    const ConstraintResult none = solve_constraints(robot, q, {}, 0.01);
    CHECK(none.q_c == q);
    CHECK(none.constraints.empty());

    const ConstraintResult first = solve_constraints(robot, q, {1}, 0.01);
    REQUIRE(first.feasible);
    const ConstraintResult again = solve_constraints(robot, first.q_c, {1}, 0.01);
    CHECK((again.q_c - first.q_c).cwiseAbs().maxCoeff() <= 1e-6);

    CHECK_THROWS_AS(solve_constraints(robot, q, {0}, 0.01), InvalidInput);
    CHECK_THROWS_AS(solve_constraints(robot, q, {7}, 0.01), InvalidInput);
    CHECK_THROWS_AS(solve_constraints(robot, q, {1}, -0.01), InvalidInput);
}

TEST_CASE("constraint projection: random desired poses") {
    const HandModel robot = rtest::robot_model();
    Rng rng(32);
    ConstraintOptions opts;
    opts.time_budget = 0.0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const JointConfig q_d = rtest::uniform_in(robot.lower(), robot.upper(), rng);
        const int finger = 1 + t % 3;
        const ConstraintResult r = solve_constraints(robot, q_d, {finger}, 0.01, opts);
        const double dist = (fingertip_position(robot, r.q_c, finger) - fingertip_position(robot, r.q_c, 0)).norm();
        worst = std::max(worst, std::abs(dist - 0.01));
        CHECK(within_limits(robot, r.q_c, 1e-12));
        CHECK(r.feasible);
        // Only the thumb and the constrained finger move.
        for (int f = 1; f < 4; ++f) {
            if (f == finger) continue;
            const FingerSlice s = robot.slice(f);
            CHECK(r.q_c.segment(s.offset, s.count) == q_d.segment(s.offset, s.count));
        }
    }
    INFO("worst violation " << worst);
    CHECK(worst <= 5e-4);

    const JointConfig q_d = rtest::uniform_in(robot.lower(), robot.upper(), rng);
    const ConstraintResult three = solve_constraints(robot, q_d, {1, 2, 3}, 0.02, opts);
    REQUIRE(three.constraints.size() == 3);
    for (const auto& c : three.constraints) CHECK(c.violation <= 5e-4);
}

TEST_CASE("constraint projection matches a grid search on a planar toy") {
    const rtest::PlanarPinch toy;
    const double d = 0.01;
    ConstraintOptions opts;
    opts.time_budget = 0.0;
    for (const Eigen::Vector4d& q_d : {Eigen::Vector4d(-0.1, -0.1, 0.1, 0.1), Eigen::Vector4d(-0.3, -0.05, 0.2, 0.4),
                                       Eigen::Vector4d(-0.05, -0.5, 0.45, 0.05)}) {
        const rtest::GridOptimum best = rtest::pinch_grid_oracle(toy, q_d, d);
        REQUIRE(best.cost < kInf);
        const ConstraintResult r = solve_constraints(toy.model, q_d, {1}, d, opts);
        INFO("grid " << best.q.transpose() << " solver " << r.q_c.transpose());
        CHECK(r.feasible);
        CHECK(std::abs(toy.distance(r.q_c.data()) - d) <= 5e-4);
        CHECK((r.q_c - best.q).cwiseAbs().maxCoeff() <= 0.02);
        CHECK((r.q_c - q_d).squaredNorm() <= best.cost + 1e-3);
    }
}

TEST_CASE("smoothing filter") {
    Eigen::VectorXd c(3);
    c << 0.5, -1.0, 2.0;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
    CHECK((smooth(zero, c, 0.01) - 0.01 * c).cwiseAbs().maxCoeff() == 0.0);
    CHECK(smooth(zero, c, 1.0) == c);
    Eigen::VectorXd f = zero;
    for (int t = 1; t <= 500; ++t) {
        f = smooth(f, c, 0.01);
        const Eigen::VectorXd expect = (1.0 - std::pow(0.99, t)) * c;
        CHECK((f - expect).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("joint-space baseline") {
    const HandModel human = rtest::human_model();
    const HandModel robot = rtest::robot_model();
    const Eigen::VectorXd hl = human.lower(), hh = human.upper(), rl = robot.lower(), rh = robot.upper();
    CHECK(retarget_joint(hl, hl, hh, rl, rh).q == rl);
    CHECK((retarget_joint(0.5 * (hl + hh), hl, hh, rl, rh).q - 0.5 * (rl + rh)).cwiseAbs().maxCoeff() < 1e-12);
    Rng rng(33);
    for (int t = 0; t < 20; ++t) {
        const JointConfig q = rtest::uniform_in(hl, hh, rng);
        const JointConfig out = retarget_joint(q, hl, hh, rl, rh).q;
        for (int j = 0; j < q.size(); ++j) {
            // Line through (hl, rl) and (hh, rh).
            const double slope = (rh[j] - rl[j]) / (hh[j] - hl[j]);
            CHECK(std::abs(out[j] - (rl[j] + slope * (q[j] - hl[j]))) < 1e-12);
        }
    }
    Eigen::VectorXd flat = hh;
    flat[2] = hl[2];
    const JointMapResult r = retarget_joint(hl, hl, flat, rl, rh);
    CHECK(r.zero_width_joints == std::vector<int>{2});
    CHECK(r.q[2] == 0.5 * (rl[2] + rh[2]));
    const JointConfig beyond = hh.array() + 1.0;
    CHECK(retarget_joint(beyond, hl, hh, rl, rh).q == rh);
}

TEST_CASE("fingertip IK") {
    SUBCASE("two-link analytic solution") {
        const double l1 = 0.05, l2 = 0.04;
        const HandModel m("two", {}, {rtest::planar_finger("f", Eigen::Vector3d::Zero(), 0.0, {l1, l2},
                                                            {{-0.2, 1.6}, {0.05, 1.6}})});
        LsqOptions opts;
        opts.time_budget = 0.0;
        opts.grad_tol = 1e-12;
        for (const auto& q_true : {std::array<double, 2>{0.3, 0.8}, {1.0, 0.4}, {-0.1, 1.4}}) {
            const Eigen::Vector3d target = fingertip_position(m, Eigen::Vector2d(q_true[0], q_true[1]), 0);
            const double x = target.x(), y = target.y();
            const double q2 = std::acos((x * x + y * y - l1 * l1 - l2 * l2) / (2 * l1 * l2));
            const double q1 = std::atan2(y, x) - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
            const FingertipIkResult r = solve_fingertip_ik(m, Eigen::Vector2d(0.3, 0.3), 0, target, opts);
            CHECK(std::abs(r.q[0] - q1) < 1e-4);
            CHECK(std::abs(r.q[1] - q2) < 1e-4);
            CHECK(r.position_error < 1e-8);
        }
    }
    SUBCASE("consistent and unreachable targets") {
        const HandModel robot = rtest::robot_model();
        Rng rng(34);
        const JointConfig q = rtest::uniform_in(robot.lower(), robot.upper(), rng);
        for (int f = 0; f < 4; ++f) {
            const FingertipIkResult same = solve_fingertip_ik(robot, q, f, fingertip_position(robot, q, f));
            CHECK((same.q - q).cwiseAbs().maxCoeff() < 1e-9);
            CHECK(same.position_error < 1e-9);

            const Eigen::Vector3d far(1.0, 1.0, 1.0);
            const FingertipIkResult r = solve_fingertip_ik(robot, q, f, far);
            CHECK(r.position_error > 0.5);
            CHECK(within_limits(robot, r.q));
            const Eigen::Vector3d base = robot.fingers()[static_cast<std::size_t>(f)].base.xyz;
            CHECK((fingertip_position(robot, r.q, f) - base).norm() <= robot.chain_length(f) + 1e-9);
        }
        const HandModel human = rtest::human_model();
        JointConfig qh = JointConfig::Zero(human.dof());
        const IkRetargetResult ik = retarget_ik(human, robot, qh, JointConfig::Zero(robot.dof()));
        CHECK(ik.position_error.size() == 4);
        for (int f : ik.unreachable_fingers) CHECK(ik.position_error[f] > 1e-3);
    }
}

TEST_CASE("residual pipeline on HKVM-labelled data equals HKVM") {
    const auto ctx = calibrated_context(true);
    RetargetSession hk(ctx, batch_config(RetargeterKind::hkvm));
    RetargetSession rg(ctx, batch_config(RetargeterKind::res_gp));
    const HandModel& human = ctx->human();
    Rng rng(35);
    JointConfig qh = 0.5 * (human.lower() + human.upper());
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
        for (Eigen::Index i = 0; i < qh.size(); ++i)
            qh[i] = std::clamp(qh[i] + rng.uniform(-0.05, 0.05), human.lower()[i], human.upper()[i]);
        const RetargetResult a = hk.step(qh);
        const RetargetResult b = rg.step(qh);
        CHECK(a.q_base == b.q_base);
        worst = std::max(worst, (a.q_c - b.q_c).cwiseAbs().maxCoeff());
    }
    INFO("largest joint difference " << worst);
    CHECK(worst <= 1e-2);
}

TEST_CASE("residual and direct GPs interpolate the calibration poses") {
    const auto ctx = calibrated_context(false);
    const DatasetLoad load = load_dataset(rtest::data_path("synthetic/calibration.json"), ctx->human(), ctx->robot());
    const HkvmSolver solver = HkvmSolver(ctx->human(), ctx->robot(), ctx->spec(), unbudgeted());
    double worst_res = 0.0, worst_direct = 0.0;
    for (const auto& s : load.dataset.samples) {
        const JointConfig q_o = solver.solve(s.human, {}).q;
        const ResidualCorrection res = apply_residual(ctx->human(), ctx->robot(), s.human, q_o, ctx->bundle()->residual);
        const ResidualCorrection dir = retarget_gp_direct(ctx->human(), ctx->robot(), s.human, ctx->bundle()->direct,
                                                          JointConfig::Zero(ctx->robot().dof()));
        for (int f : s.active_fingers) {
            const FingerSlice sl = ctx->robot().slice(f);
            worst_res = std::max(worst_res, (res.q_d - s.robot).segment(sl.offset, sl.count).cwiseAbs().maxCoeff());
            worst_direct = std::max(worst_direct, (dir.q_d - s.robot).segment(sl.offset, sl.count).cwiseAbs().maxCoeff());
        }
    }
    INFO("residual " << worst_res << ", direct " << worst_direct);
    CHECK(worst_res <= 0.05);
    CHECK(worst_direct <= 0.05);
}

TEST_CASE("retargeting sessions") {
    const auto ctx = calibrated_context(false, 300);
    const HandModel& human = ctx->human();
    Rng rng(36);
    std::vector<JointConfig> inputs;
    for (int t = 0; t < 20; ++t) inputs.push_back(rtest::uniform_in(human.lower(), human.upper(), rng));

    for (RetargeterKind kind : all_retargeter_kinds()) {
        CAPTURE(to_string(kind));
        RetargetSession a(ctx, batch_config(kind));
        RetargetSession b(ctx, batch_config(kind));
        for (const auto& q : inputs) {
            const RetargetResult ra = a.step(q);
            const RetargetResult rb = b.step(q);
            CHECK(ra.q_target == rb.q_target);
            CHECK(within_limits(ctx->robot(), ra.q_c, 1e-12));
        }
    }

    SUBCASE("constant input: joint baseline is constant, filter converges geometrically") {
        RetargetSession s(ctx, batch_config(RetargeterKind::joint));
        const RetargetResult first = s.step(inputs[0]);
        CHECK((first.q_target - 0.01 * first.q_c).cwiseAbs().maxCoeff() < 1e-15);
        for (int t = 2; t <= 50; ++t) {
            const RetargetResult r = s.step(inputs[0]);
            CHECK(r.q_c == first.q_c);
            CHECK((r.q_target - (1 - std::pow(0.99, t)) * r.q_c).cwiseAbs().maxCoeff() <= 1e-12);
        }
        s.reset();
        CHECK((s.step(inputs[0]).q_target - 0.01 * first.q_c).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("constraint toggles") {
        RetargetSession s(ctx, batch_config(RetargeterKind::res_gp));
        s.set_constraint(2, true);
        s.set_constraint(1, true);
        CHECK(s.constraints() == std::vector<int>{1, 2});
        const RetargetResult r = s.step(inputs[1]);
        REQUIRE(r.constraints.size() == 2);
        for (const auto& c : r.constraints) CHECK(c.violation <= 5e-4);
        s.set_constraint(1, false);
        CHECK(s.constraints() == std::vector<int>{2});
        CHECK_THROWS_AS(s.set_constraint(0, true), InvalidInput);
    }
    SUBCASE("GP kinds need a bundle") {
        auto bare = std::make_shared<const RetargetContext>(rtest::human_model(), rtest::robot_model());
        CHECK_THROWS_AS(RetargetSession(bare, batch_config(RetargeterKind::res_gp)), InvalidInput);
        CHECK_THROWS_AS(RetargetSession(bare, batch_config(RetargeterKind::gp_direct)), InvalidInput);
        RetargetSession s(bare, batch_config(RetargeterKind::hkvm));
        CHECK_THROWS_AS(s.set_kind(RetargeterKind::res_gp), InvalidInput);
        CHECK(s.config().kind == RetargeterKind::hkvm);
        CHECK_THROWS_AS(s.step(JointConfig::Zero(3)), InvalidInput);
    }
    SUBCASE("config validation") {
        SessionConfig c = batch_config(RetargeterKind::hkvm);
        c.smoothing = 0.0;
        CHECK_THROWS_AS(c.validate(), InvalidInput);
        c.smoothing = 1.5;
        CHECK_THROWS_AS(c.validate(), InvalidInput);
        c = batch_config(RetargeterKind::hkvm);
        c.distance = 0.0;
        CHECK_THROWS_AS(c.validate(), InvalidInput);
        CHECK_THROWS_AS(parse_retargeter_kind("slerp"), InvalidInput);
        for (RetargeterKind k : all_retargeter_kinds()) CHECK(parse_retargeter_kind(to_string(k)) == k);
    }
}
