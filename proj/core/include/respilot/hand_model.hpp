#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace respilot {

/// Joint angles of one hand in radians, finger-major (all joints of finger 0, then finger 1, ...).
using JointConfig = Eigen::VectorXd;

inline constexpr int kHandModelSchemaVersion = 1;
inline constexpr int kFingerCount = 4;
/// Finger 0 is the thumb; thumb-to-fingertip vectors and constraints are built around it.
inline constexpr int kThumbFinger = 0;
inline constexpr std::string_view kPalmKeypoint = "palm";

struct JointLimits {
    double lo = 0.0;
    double hi = 0.0;

    double width() const { return hi - lo; }
    double mid() const { return 0.5 * (lo + hi); }
};

/// Fixed transform given as translation (m) and roll/pitch/yaw (rad, applied as Rz*Ry*Rx).
struct Origin {
    Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
    Eigen::Vector3d rpy = Eigen::Vector3d::Zero();

    Eigen::Isometry3d transform() const;
};

struct JointSpec {
    std::string name;
    Origin origin;  // relative to the previous joint frame (or finger base)
    Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
    JointLimits limits;
};

struct FingerChain {
    std::string name;
    Origin base;  // finger base in the hand root frame
    std::vector<JointSpec> joints;
    Eigen::Vector3d fingertip_offset = Eigen::Vector3d::Zero();  // tip keypoint in the last joint frame
};

/// Contiguous range of a finger's joints inside a JointConfig.
struct FingerSlice {
    int offset = 0;
    int count = 0;
};

/// Immutable serial-chain hand. Keypoints are the palm (index 0) and one fingertip per finger
/// (index 1 + finger), named "palm" and "<finger>_tip".
class HandModel {
public:
    HandModel(std::string name, Origin palm_frame, std::vector<FingerChain> fingers, std::string description = {});

    const std::string& name() const { return name_; }
    const std::string& description() const { return description_; }
    const Origin& palm_frame() const { return palm_frame_; }
    const std::vector<FingerChain>& fingers() const { return fingers_; }
    int finger_count() const { return static_cast<int>(fingers_.size()); }
    int dof() const { return dof_; }
    FingerSlice slice(int finger) const { return slices_.at(static_cast<std::size_t>(finger)); }
    int finger_of_joint(int joint) const { return joint_finger_.at(static_cast<std::size_t>(joint)); }

    const Eigen::VectorXd& lower() const { return lower_; }
    const Eigen::VectorXd& upper() const { return upper_; }
    JointLimits limits(int joint) const { return {lower_[joint], upper_[joint]}; }

    int keypoint_count() const { return 1 + finger_count(); }
    const std::vector<std::string>& keypoint_ids() const { return keypoint_ids_; }
    /// Throws InvalidInput on unknown id.
    int keypoint_index(std::string_view id) const;
    int finger_index(std::string_view finger_name) const;

    /// Sum of link lengths from finger base to fingertip keypoint.
    double chain_length(int finger) const;

    /// Throws InvalidInput unless q has dof() finite entries.
    void check_config(const JointConfig& q, std::string_view what = "joint config") const;

    Eigen::Isometry3d palm_from_root() const { return palm_from_root_; }

private:
    std::string name_;
    std::string description_;
    Origin palm_frame_;
    std::vector<FingerChain> fingers_;
    std::vector<FingerSlice> slices_;
    std::vector<int> joint_finger_;
    std::vector<std::string> keypoint_ids_;
    Eigen::VectorXd lower_;
    Eigen::VectorXd upper_;
    Eigen::Isometry3d palm_from_root_;
    int dof_ = 0;
};

/// Checks the 4-finger layout that bundled and loaded models must satisfy.
void validate_hand_layout(const HandModel& model);

/// Keypoint positions in the palm frame, indexed like HandModel::keypoint_ids().
std::vector<Eigen::Vector3d> forward_kinematics(const HandModel& model, const JointConfig& q);

Eigen::Vector3d fingertip_position(const HandModel& model, const JointConfig& q, int finger);

/// Position Jacobian of a fingertip w.r.t. the finger's own joints (3 x finger dof).
Eigen::Matrix3Xd fingertip_jacobian(const HandModel& model, const JointConfig& q, int finger);

/// Fingertip position and its Jacobian in one pass.
void fingertip_kinematics(const HandModel& model, const JointConfig& q, int finger,
                          Eigen::Vector3d& position, Eigen::Matrix3Xd& jacobian);

/// Ordered (from, to) keypoint pairs; vector i is position(to) - position(from).
struct KeypointVectorSpec {
    struct Pair {
        int from = 0;
        int to = 0;
    };
    std::vector<Pair> pairs;

    int size() const { return static_cast<int>(pairs.size()); }

    /// 4 palm->tip, 3 thumb->tip and 3 tip->tip vectors among the non-thumb fingers.
    static KeypointVectorSpec default_for(const HandModel& model);
    static KeypointVectorSpec from_names(const HandModel& model,
                                         const std::vector<std::pair<std::string, std::string>>& names);
};

/// Throws InvalidInput on duplicate pairs or keypoints outside the model.
void validate_keypoint_spec(const HandModel& model, const KeypointVectorSpec& spec);

Eigen::Vector3d keypoint_vector(const HandModel& model, const JointConfig& q, int pair_index,
                                const KeypointVectorSpec& spec);

JointConfig clamp_to_limits(const HandModel& model, const JointConfig& q);
bool within_limits(const HandModel& model, const JointConfig& q, double tol = 0.0);

HandModel load_model(const std::filesystem::path& path);
void save_model(const HandModel& model, const std::filesystem::path& path);
HandModel model_from_json(const nlohmann::json& doc);
nlohmann::json model_to_json(const HandModel& model);

/// Stable 64-bit content hash of a model (hex string), used to pin datasets and bundles.
std::string model_hash(const HandModel& model);

}  // namespace respilot
