#pragma once

#include "respilot/hand_model.hpp"
#include "respilot/io.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#ifndef RESPILOT_TEST_DATA_DIR
#define RESPILOT_TEST_DATA_DIR "data"
#endif

namespace rtest {

inline std::string data_path(const std::string& file) { return std::string(RESPILOT_TEST_DATA_DIR) + "/" + file; }

inline respilot::HandModel human_model() { return respilot::load_model(data_path("human_proxy.json")); }
inline respilot::HandModel robot_model() { return respilot::load_model(data_path("robot_allegro_like.json")); }

/// Planar finger in the palm xy plane: joints about +z, links along +x of each joint frame.
inline respilot::FingerChain planar_finger(const std::string& name, Eigen::Vector3d base, double base_yaw,
                                           const std::vector<double>& links,
                                           const std::vector<respilot::JointLimits>& limits) {
    respilot::FingerChain chain;
    chain.name = name;
    chain.base.xyz = base;
    chain.base.rpy = {0.0, 0.0, base_yaw};
    for (std::size_t j = 0; j < links.size(); ++j) {
        respilot::JointSpec js;
        js.name = name + "_j" + std::to_string(j);
        js.axis = Eigen::Vector3d::UnitZ();
        if (j > 0) js.origin.xyz = {links[j - 1], 0.0, 0.0};
        js.limits = limits[j];
        chain.joints.push_back(js);
    }
    chain.fingertip_offset = {links.back(), 0.0, 0.0};
    return chain;
}

/// Test-only 2D forward kinematics of planar_finger: base + sum of links at cumulative angles.
inline Eigen::Vector2d planar_tip(const Eigen::Vector2d& base, double base_yaw, const std::vector<double>& links,
                                  const double* q) {
    Eigen::Vector2d p = base;
    double a = base_yaw;
    for (std::size_t j = 0; j < links.size(); ++j) {
        a += q[j];
        p += links[j] * Eigen::Vector2d(std::cos(a), std::sin(a));
    }
    return p;
}

inline Eigen::VectorXd uniform_in(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, respilot::Rng& rng) {
    Eigen::VectorXd q(lo.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = rng.uniform(lo[i], hi[i]);
    return q;
}

// Independent forward kinematics: explicit 4x4 homogeneous transforms, Rodrigues rotations.
using Mat4 = Eigen::Matrix4d;

inline Mat4 rot_x(double a) {
    Mat4 m = Mat4::Identity();
    m(1, 1) = std::cos(a), m(1, 2) = -std::sin(a);
    m(2, 1) = std::sin(a), m(2, 2) = std::cos(a);
    return m;
}
inline Mat4 rot_y(double a) {
    Mat4 m = Mat4::Identity();
    m(0, 0) = std::cos(a), m(0, 2) = std::sin(a);
    m(2, 0) = -std::sin(a), m(2, 2) = std::cos(a);
    return m;
}
inline Mat4 rot_z(double a) {
    Mat4 m = Mat4::Identity();
    m(0, 0) = std::cos(a), m(0, 1) = -std::sin(a);
    m(1, 0) = std::sin(a), m(1, 1) = std::cos(a);
    return m;
}
inline Mat4 trans(const Eigen::Vector3d& t) {
    Mat4 m = Mat4::Identity();
    m.block<3, 1>(0, 3) = t;
    return m;
}
inline Mat4 origin(const respilot::Origin& o) { return trans(o.xyz) * rot_z(o.rpy.z()) * rot_y(o.rpy.y()) * rot_x(o.rpy.x()); }

// Rodrigues: R = I + sin(a) K + (1 - cos(a)) K^2.
inline Mat4 rot_axis(Eigen::Vector3d k, double a) {
    k.normalize();
    Eigen::Matrix3d kx;
    kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity() + std::sin(a) * kx + (1 - std::cos(a)) * kx * kx;
    return m;
}
inline Mat4 invert(const Mat4& t) {
    Mat4 m = Mat4::Identity();
    const Eigen::Matrix3d rt = t.block<3, 3>(0, 0).transpose();
    m.block<3, 3>(0, 0) = rt;
    m.block<3, 1>(0, 3) = -rt * t.block<3, 1>(0, 3);
    return m;
}

inline Eigen::Vector3d oracle_tip(const respilot::HandModel& model, const respilot::JointConfig& q, int finger) {
    const respilot::FingerChain& chain = model.fingers()[static_cast<std::size_t>(finger)];
    Mat4 t = invert(origin(model.palm_frame())) * origin(chain.base);
    const int off = model.slice(finger).offset;
    for (std::size_t j = 0; j < chain.joints.size(); ++j)
        t = t * origin(chain.joints[j].origin) * rot_axis(chain.joints[j].axis, q[off + static_cast<int>(j)]);
    Eigen::Vector4d p;
    p << chain.fingertip_offset, 1.0;
    return (t * p).head<3>();
}


/// All keypoints (palm first) from the oracle.
inline std::vector<Eigen::Vector3d> oracle_keypoints(const respilot::HandModel& model, const respilot::JointConfig& q) {
    std::vector<Eigen::Vector3d> out{Eigen::Vector3d::Zero()};
    for (int f = 0; f < model.finger_count(); ++f) out.push_back(oracle_tip(model, q, f));
    return out;
}

}  // namespace rtest
