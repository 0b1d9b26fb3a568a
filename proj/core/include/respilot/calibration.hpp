#pragma once

#include "respilot/hand_model.hpp"
#include "respilot/hkvm.hpp"
#include "respilot/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace respilot {

inline constexpr int kDatasetSchemaVersion = 1;

struct ModelRef {
    std::string name;
    std::string hash;

    static ModelRef of(const HandModel& model) { return {model.name(), model_hash(model)}; }
    bool operator==(const ModelRef&) const = default;
};

/// One paired human/robot pose. Only the active fingers' robot slices are trusted labels.
struct CalibrationSample {
    std::string pose_name;
    std::string family;  // pose family, e.g. "pinch_near" or "power"
    JointConfig human;
    JointConfig robot;
    std::vector<int> active_fingers;  // sorted, unique

    bool is_active(int finger) const;
};

struct CalibrationDataset {
    ModelRef human_model;
    ModelRef robot_model;
    std::vector<CalibrationSample> samples;

    int active_count(int finger) const;
    std::vector<std::string> families() const;  // in first-appearance order
};

/// Checks every sample against the models and that every finger is active somewhere.
/// Throws ValidationError naming the offending sample or finger.
void validate_dataset(const CalibrationDataset& dataset, const HandModel& human, const HandModel& robot);

struct DatasetLoad {
    CalibrationDataset dataset;
    std::vector<std::string> warnings;  // e.g. model hash mismatches
};

DatasetLoad load_dataset(const std::filesystem::path& path, const HandModel& human, const HandModel& robot);
void save_dataset(const CalibrationDataset& dataset, const HandModel& human, const std::filesystem::path& path);
nlohmann::json dataset_to_json(const CalibrationDataset& dataset, const HandModel& human);
DatasetLoad dataset_from_json(const nlohmann::json& doc, const HandModel& human, const HandModel& robot);

/// Training set for one finger: human finger slices (C x m) and targets (C x 2m, see
/// vectorize_residual), plus the dataset indices they came from.
struct FingerTrainingSet {
    int finger = 0;
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;
    std::vector<int> sample_indices;
};

/// Cold-started HKVM solution for every sample, in dataset order.
std::vector<JointConfig> hkvm_labels(const CalibrationDataset& dataset, const HkvmSolver& solver);

/// Residual targets V(robot[f]) - V(hkvm(human)[f]) for the samples where `finger` is
/// active. Throws NoDataError if the finger is never active.
FingerTrainingSet build_residual_targets(const CalibrationDataset& dataset, const HkvmSolver& solver, int finger);
FingerTrainingSet build_residual_targets(const CalibrationDataset& dataset,
                                         const std::vector<JointConfig>& hkvm_solutions,
                                         const HandModel& human, const HandModel& robot, int finger);

/// Direct targets V(robot[f]) for the constant-mean direct-GP baseline.
FingerTrainingSet build_direct_targets(const CalibrationDataset& dataset, const HandModel& human,
                                       const HandModel& robot, int finger);

/// Ground-truth human-to-robot map used to label synthetic poses.
using CalibrationWarp = std::function<JointConfig(const JointConfig& human_config)>;

/// Labels equal to the cold-started HKVM solution (null residual).
CalibrationWarp hkvm_warp(const HkvmSolver& solver);

/// Cold HKVM followed by a radial expansion of each robot joint about its range centre:
/// u' = 0.5 + (1 + gain) (u - 0.5) in normalised joint coordinates, clipped to
/// [margin, 1 - margin]. Pushes labels toward the robot's range boundaries, including the
/// near-palm flexion extremes that HKVM alone does not reach.
CalibrationWarp expansion_warp(const HkvmSolver& solver, double gain = 0.6, double margin = 0.02);

/// 24 samples with the structure of a boundary-pose calibration set: thumb pinches with
/// each finger (near palm, far from palm, halfway), power grasps, per-finger hook and
/// tabletop poses, abduction poses, and thumb excursions. Human poses carry seeded
/// operator jitter. Throws ValidationError if the warp leaves the robot limits.
CalibrationDataset generate_synthetic_calibration(std::uint64_t seed, const HandModel& human,
                                                  const HandModel& robot, const CalibrationWarp& warp);

/// Human trajectory that sweeps through every calibration pose (dataset order, then a
/// shuffled second pass) with smooth blends and seeded jitter. `steps_per_segment` ticks
/// per blend.
Trajectory generate_sweep_trajectory(std::uint64_t seed, const CalibrationDataset& dataset, const HandModel& human,
                                     int steps_per_segment = 20);

}  // namespace respilot
