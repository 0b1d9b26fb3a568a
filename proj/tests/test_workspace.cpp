#include "oracles.hpp"
#include "support.hpp"

#include "respilot/errors.hpp"
#include "respilot/workspace.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace respilot;

namespace {

HandModel one_finger(int joints) {
    std::vector<double> links(static_cast<std::size_t>(joints), 0.03);
    std::vector<JointLimits> lim(static_cast<std::size_t>(joints), JointLimits{-1.0, 1.0});
    return HandModel("one", {}, {rtest::planar_finger("f", Eigen::Vector3d::Zero(), 0.0, links, lim)});
}

}  // namespace

TEST_CASE("voxel counts match a brute-force oracle") {
    const HandModel robot = rtest::robot_model();
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        // Random walks revisit cells, uniform draws mostly do not; mix both.
        std::vector<JointConfig> qs;
        JointConfig q = rtest::uniform_in(robot.lower(), robot.upper(), rng);
        const int n = 20 + trial * 4;
        for (int t = 0; t < n; ++t) {
            if (trial % 2 == 0) {
                for (Eigen::Index i = 0; i < q.size(); ++i)
                    q[i] = std::clamp(q[i] + rng.uniform(-0.04, 0.04), robot.lower()[i], robot.upper()[i]);
            } else {
                q = rtest::uniform_in(robot.lower(), robot.upper(), rng);
            }
            qs.push_back(q);
        }
        const WorkspaceVolume j = joint_workspace(qs, robot, 0.05);
        const WorkspaceVolume t = fingertip_workspace(qs, robot, 0.005);
        CHECK(j.cells == rtest::oracle_joint_cells(qs, robot, 0.05));
        CHECK(t.cells == rtest::oracle_tip_cells(qs, robot, 0.005));
        double jt = 0.0, tt = 0.0;
        for (int f = 0; f < 4; ++f) {
            jt += static_cast<double>(j.cells[static_cast<std::size_t>(f)]) * std::pow(0.05, 4);
            tt += static_cast<double>(t.cells[static_cast<std::size_t>(f)]) * 0.125;
        }
        CHECK(j.total == doctest::Approx(jt).epsilon(1e-12));
        CHECK(t.total == doctest::Approx(tt).epsilon(1e-12));
    }
}

TEST_CASE("closed-form volumes") {
    const HandModel robot = rtest::robot_model();
    const JointConfig mid = 0.5 * (robot.lower() + robot.upper());

    SUBCASE("single configuration") {
        const std::vector<JointConfig> one{mid};
        CHECK(joint_workspace(one, robot, 0.05).total == doctest::Approx(4 * std::pow(0.05, 4)).epsilon(1e-12));
        CHECK(fingertip_workspace(one, robot, 0.005).total == doctest::Approx(0.5).epsilon(1e-12));
        // Repeating the configuration adds nothing.
        const std::vector<JointConfig> many(25, mid);
        CHECK(joint_workspace(many, robot).total == joint_workspace(one, robot).total);
        CHECK(fingertip_workspace(many, robot).total == fingertip_workspace(one, robot).total);
    }
    SUBCASE("three joint cells") {
        const HandModel m = one_finger(4);
        JointConfig a(4);
        a << 0.01, 0.01, 0.01, 0.01;
        JointConfig b = a, c = a, same = a;
        b[0] += 0.05;
        c[3] += 0.05;
        same.array() += 0.02;
        const WorkspaceVolume v = joint_workspace({a, b, c, same}, m, 0.05);
        CHECK(v.cells == std::vector<std::size_t>{3});
        CHECK(v.total == doctest::Approx(1.875e-5).epsilon(1e-12));
    }
    SUBCASE("two fingertip cells") {
        const HandModel m = one_finger(1);
        JointConfig a(1), b(1), c(1);
        // Tip at (0.03 cos q, 0.03 sin q, 0): q = 0.02 and q = 0.03 share a cell, q = 0.5 does not.
        a << 0.02;
        b << 0.03;
        c << 0.5;
        const WorkspaceVolume v = fingertip_workspace({a, b, c}, m, 0.005);
        CHECK(v.cells == std::vector<std::size_t>{2});
        CHECK(v.total == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("negative coordinates use the true floor") {
        const HandModel m = one_finger(1);
        JointConfig a(1), b(1);
        a << -0.01;
        b << 0.01;
        CHECK(joint_workspace({a, b}, m, 0.05).cells == std::vector<std::size_t>{2});
        // Tips at y = -0.0003 and y = +0.0003 straddle zero.
        CHECK(fingertip_workspace({a, b}, m, 0.005).cells == std::vector<std::size_t>{2});
    }
    SUBCASE("input checks") {
        CHECK_THROWS_AS(joint_workspace({mid}, robot, 0.0), InvalidInput);
        CHECK_THROWS_AS(fingertip_workspace({mid}, robot, -1.0), InvalidInput);
        CHECK_THROWS_AS(joint_workspace({JointConfig::Zero(3)}, robot), InvalidInput);
        const WorkspaceVolume empty = joint_workspace({}, robot);
        CHECK(empty.total == 0.0);
    }
}

TEST_CASE("retargeter comparison") {
    auto ctx = std::make_shared<const RetargetContext>(rtest::human_model(), rtest::robot_model());
    const HandModel& human = ctx->human();
    Rng rng(42);
    Trajectory traj;
    traj.model = human.name();
    JointConfig q = 0.5 * (human.lower() + human.upper());
    for (int t = 0; t < 120; ++t) {
        for (Eigen::Index i = 0; i < q.size(); ++i)
            q[i] = std::clamp(q[i] + rng.uniform(-0.08, 0.08), human.lower()[i], human.upper()[i]);
        traj.configs.push_back(q);
    }
    SessionConfig cfg;
    cfg.hkvm.time_budget = std::numeric_limits<double>::infinity();
    cfg.constraint.time_budget = 0.0;
    const std::vector<RetargeterKind> kinds{RetargeterKind::joint, RetargeterKind::ik, RetargeterKind::hkvm};

    const WorkspaceReport a = compare_retargeters(ctx, traj, kinds, cfg);
    const WorkspaceReport b = compare_retargeters(ctx, traj, kinds, cfg);
    REQUIRE(a.rows.size() == 3);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].joint.cells == b.rows[i].joint.cells);
        CHECK(a.rows[i].fingertip.cells == b.rows[i].fingertip.cells);
    }
    CHECK(a.find("hkvm") != nullptr);
    CHECK(a.find("res_gp") == nullptr);

    // The joint map has no state, so the order of the ticks cannot matter.
    Trajectory shuffled = traj;
    std::mt19937 gen(7);
    std::shuffle(shuffled.configs.begin(), shuffled.configs.end(), gen);
    const WorkspaceReport s = compare_retargeters(ctx, shuffled, {RetargeterKind::joint}, cfg);
    CHECK(s.rows[0].joint.cells == a.find("joint")->joint.cells);
    CHECK(s.rows[0].fingertip.cells == a.find("joint")->fingertip.cells);

    CHECK_THROWS_AS(compare_retargeters(ctx, traj, kinds, cfg, 0.0, 0.005), InvalidInput);
    CHECK_THROWS_AS(compare_retargeters(ctx, Trajectory{}, kinds, cfg), ValidationError);
}
