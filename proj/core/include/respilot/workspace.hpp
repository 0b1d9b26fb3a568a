#pragma once

#include "respilot/hand_model.hpp"
#include "respilot/pipeline.hpp"
#include "respilot/trajectory.hpp"

#include <nlohmann/json_fwd.hpp>

#include <memory>
#include <string>
#include <vector>

namespace respilot {

struct WorkspaceVolume {
    double total = 0.0;
    std::vector<double> per_finger;
    std::vector<std::size_t> cells;  // distinct voxels per finger
};

/// Per finger, distinct floor(q[f] / delta) tuples; volume = count * delta^|f| (rad^|f|).
WorkspaceVolume joint_workspace(const std::vector<JointConfig>& configs, const HandModel& model, double delta = 0.05);

/// Per finger, distinct floor(tip / delta) cells; volume = count * delta^3, reported in cm^3.
WorkspaceVolume fingertip_workspace(const std::vector<JointConfig>& configs, const HandModel& model,
                                    double delta = 0.005);

struct WorkspaceRow {
    std::string retargeter;
    WorkspaceVolume joint;
    WorkspaceVolume fingertip;
};

struct WorkspaceReport {
    double delta_joint = 0.05;
    double delta_tip = 0.005;
    std::vector<std::string> fingers;
    std::vector<WorkspaceRow> rows;

    const WorkspaceRow* find(std::string_view retargeter) const;
};

/// Runs each retargeter over the human trajectory (fresh session each, sequential warm-started
/// ticks, no constraints) and voxelizes the constrained-stage outputs q_c.
WorkspaceReport compare_retargeters(std::shared_ptr<const RetargetContext> context, const Trajectory& human_traj,
                                    const std::vector<RetargeterKind>& kinds, const SessionConfig& base_config,
                                    double delta_joint = 0.05, double delta_tip = 0.005);

nlohmann::json report_to_json(const WorkspaceReport& report);
std::string report_to_table(const WorkspaceReport& report);

}  // namespace respilot
