#include "support.hpp"

#include "respilot/errors.hpp"
#include "respilot/io.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>

using namespace respilot;

using rtest::oracle_tip;

TEST_CASE("straight chain at zero config reaches the summed link length") {
    const std::vector<double> links{0.04, 0.03, 0.02};
    const HandModel m("line", {}, {rtest::planar_finger("f", Eigen::Vector3d(0.01, 0.0, 0.0), 0.0, links,
                                                         {{-1, 1}, {-1, 1}, {-1, 1}})});
    const auto kp = forward_kinematics(m, JointConfig::Zero(3));
    CHECK((kp[1] - Eigen::Vector3d(0.01, 0, 0)).norm() == doctest::Approx(0.09).epsilon(1e-12));
}

TEST_CASE("single revolute joint at a right angle") {
    const HandModel m("one", {}, {rtest::planar_finger("f", Eigen::Vector3d::Zero(), 0.0, {0.05}, {{-2, 2}})});
    JointConfig q(1);
    q << std::numbers::pi / 2;
    const Eigen::Vector3d tip = fingertip_position(m, q, 0);
    CHECK(tip.x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(tip.y() == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("forward kinematics matches a homogeneous-transform oracle") {
    for (const HandModel& m : {rtest::human_model(), rtest::robot_model()}) {
        Rng rng(7);
        for (int trial = 0; trial < 50; ++trial) {
            const JointConfig q = rtest::uniform_in(m.lower(), m.upper(), rng);
            const auto kp = forward_kinematics(m, q);
            CHECK(kp[0].norm() < 1e-15);
            for (int f = 0; f < m.finger_count(); ++f)
                CHECK((kp[static_cast<std::size_t>(1 + f)] - oracle_tip(m, q, f)).norm() < 1e-9);
        }
    }
}

TEST_CASE("fingertip Jacobian matches central differences") {
    const HandModel m = rtest::robot_model();
    Rng rng(11);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const JointConfig q = rtest::uniform_in(m.lower(), m.upper(), rng);
        for (int f = 0; f < m.finger_count(); ++f) {
            const Eigen::Matrix3Xd jac = fingertip_jacobian(m, q, f);
            const FingerSlice s = m.slice(f);
            for (int j = 0; j < s.count; ++j) {
                JointConfig qp = q, qm = q;
                qp[s.offset + j] += h;
                qm[s.offset + j] -= h;
                const Eigen::Vector3d fd = (fingertip_position(m, qp, f) - fingertip_position(m, qm, f)) / (2 * h);
                CHECK((jac.col(j) - fd).norm() < 1e-8);
            }
        }
    }
}

TEST_CASE("keypoint vectors") {
    const HandModel m = rtest::robot_model();
    Rng rng(3);
    const JointConfig q = rtest::uniform_in(m.lower(), m.upper(), rng);

    KeypointVectorSpec degenerate;
    degenerate.pairs.push_back({0, 0});
    CHECK(keypoint_vector(m, q, 0, degenerate).norm() == 0.0);

    KeypointVectorSpec fwd, rev;
    fwd.pairs.push_back({1, 2});
    rev.pairs.push_back({2, 1});
    CHECK((keypoint_vector(m, q, 0, fwd) + keypoint_vector(m, q, 0, rev)).norm() < 1e-15);
    const Eigen::Vector3d expect = oracle_tip(m, q, 1) - oracle_tip(m, q, 0);
    CHECK((keypoint_vector(m, q, 0, fwd) - expect).norm() < 1e-9);

    const KeypointVectorSpec def = KeypointVectorSpec::default_for(m);
    CHECK(def.size() == 10);
    CHECK_NOTHROW(validate_keypoint_spec(m, def));
    KeypointVectorSpec dup;
    dup.pairs = {{0, 1}, {0, 1}};
    CHECK_THROWS_AS(validate_keypoint_spec(m, dup), InvalidInput);
}

TEST_CASE("clamping to joint limits") {
    const HandModel m = rtest::robot_model();
    const JointConfig mid = 0.5 * (m.lower() + m.upper());
    CHECK(clamp_to_limits(m, mid) == mid);
    JointConfig q = mid;
    q[0] = m.lower()[0] - 0.3;
    q[5] = m.upper()[5] + 1.0;
    const JointConfig c = clamp_to_limits(m, q);
    CHECK(c[0] == m.lower()[0]);
    CHECK(c[5] == m.upper()[5]);
    CHECK(clamp_to_limits(m, c) == c);
    CHECK(within_limits(m, c));
    CHECK_FALSE(within_limits(m, q));
}

TEST_CASE("bundled models and serialization") {
    const HandModel robot = rtest::robot_model();
    CHECK(robot.finger_count() == 4);
    CHECK(robot.dof() == 16);
    for (int f = 0; f < 4; ++f) CHECK(robot.slice(f).count == 4);
    CHECK_NOTHROW(validate_hand_layout(robot));

    const auto path = std::filesystem::temp_directory_path() / "respilot_model_roundtrip.json";
    save_model(robot, path);
    const HandModel back = load_model(path);
    CHECK(model_to_json(back) == model_to_json(robot));
    CHECK(model_hash(back) == model_hash(robot));
    std::filesystem::remove(path);

    nlohmann::json doc = model_to_json(robot);
    doc["fingers"].erase(3);
    CHECK_THROWS_AS(model_from_json(doc), ValidationError);

    doc = model_to_json(robot);
    doc["fingers"][0]["joints"][0]["limits"] = {1.0, -1.0};
    CHECK_THROWS_AS(model_from_json(doc), ValidationError);
}

TEST_CASE("config checks") {
    const HandModel m = rtest::robot_model();
    CHECK_THROWS_AS(m.check_config(JointConfig::Zero(15)), InvalidInput);
    JointConfig q = JointConfig::Zero(16);
    q[3] = std::nan("");
    CHECK_THROWS_AS(forward_kinematics(m, q), InvalidInput);
    CHECK_THROWS_AS(m.finger_index("pinky"), InvalidInput);
}
