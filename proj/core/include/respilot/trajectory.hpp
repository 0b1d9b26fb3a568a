#pragma once

#include "respilot/hand_model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace respilot {

inline constexpr int kTrajectorySchemaVersion = 1;

/// Ordered joint configurations of one hand, optionally time-stamped (s).
struct Trajectory {
    std::string model;  // name of the hand model the configs belong to
    std::vector<JointConfig> configs;
    std::vector<double> timestamps;  // empty or one per config

    std::size_t size() const { return configs.size(); }
    /// Nonempty, uniform dimension, finite, timestamps matching when present.
    void validate() const;
};

Trajectory load_trajectory(const std::filesystem::path& path);
void save_trajectory(const Trajectory& traj, const std::filesystem::path& path);
nlohmann::json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& doc);

}  // namespace respilot
