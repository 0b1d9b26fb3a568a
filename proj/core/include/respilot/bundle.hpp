#pragma once

#include "respilot/calibration.hpp"
#include "respilot/hkvm.hpp"
#include "respilot/residual_gp.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace respilot {

inline constexpr int kBundleSchemaVersion = 1;

/// Everything learned from one operator's calibration: residual GPs (one per finger), the
/// direct-GP baseline models, the HKVM parameters the residuals were computed against, and
/// the operator's recorded per-joint range (used by the joint-space baseline).
struct CalibrationBundle {
    ModelRef human_model;
    ModelRef robot_model;
    HkvmParams hkvm;
    std::vector<std::pair<std::string, std::string>> keypoint_pairs;  // HKVM vectors (from, to)
    std::vector<TrainedFingerGP> residual;
    std::vector<TrainedFingerGP> direct;  // may be empty
    Eigen::VectorXd human_range_lo;
    Eigen::VectorXd human_range_hi;

    bool has_direct() const { return !direct.empty(); }
    /// Content hash of the serialized bundle.
    std::string id() const;
};

/// Throws ValidationError when the bundle does not cover every finger of the models or
/// its shapes disagree with them.
void validate_bundle(const CalibrationBundle& bundle, const HandModel& human, const HandModel& robot);

nlohmann::json bundle_to_json(const CalibrationBundle& bundle);
CalibrationBundle bundle_from_json(const nlohmann::json& doc);
CalibrationBundle load_bundle(const std::filesystem::path& path);
void save_bundle(const CalibrationBundle& bundle, const std::filesystem::path& path);

/// Per-joint [min, max] of the human configs in the calibration set.
void recorded_human_range(const CalibrationDataset& dataset, Eigen::VectorXd& lo, Eigen::VectorXd& hi);

struct CalibrationOptions {
    GpTrainOptions gp;         // lr, epochs, seed
    bool train_direct = true;  // also fit the direct-GP baseline
};

struct FingerTrainingReport {
    int finger = 0;
    int samples = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double seconds = 0.0;
    bool all_finite = true;
};

struct CalibrationReport {
    std::vector<FingerTrainingReport> residual;
    std::vector<FingerTrainingReport> direct;
    double seconds = 0.0;
};

/// Keypoint spec recorded in the bundle, resolved against `model`.
KeypointVectorSpec bundle_keypoint_spec(const CalibrationBundle& bundle, const HandModel& model);

/// Builds cold-start HKVM residual targets, trains one GP per finger (fingers in parallel)
/// and packages the result.
CalibrationBundle calibrate(const CalibrationDataset& dataset, const HkvmSolver& solver,
                            const CalibrationOptions& options, CalibrationReport* report = nullptr);

}  // namespace respilot
