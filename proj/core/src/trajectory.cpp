#include "respilot/trajectory.hpp"

#include "respilot/errors.hpp"
#include "respilot/io.hpp"

namespace respilot {

using nlohmann::json;

void Trajectory::validate() const {
    if (configs.empty()) throw ValidationError("trajectory: no configurations");
    const auto dim = configs.front().size();
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (configs[i].size() != dim)
            throw ValidationError("trajectory: config " + std::to_string(i) + " has " +
                                  std::to_string(configs[i].size()) + " angles, expected " + std::to_string(dim));
        if (!configs[i].allFinite())
            throw ValidationError("trajectory: config " + std::to_string(i) + " is not finite");
    }
    if (!timestamps.empty() && timestamps.size() != configs.size())
        throw ValidationError("trajectory: timestamps count does not match configs");
}

json trajectory_to_json(const Trajectory& traj) {
    json configs = json::array();
    for (const auto& q : traj.configs) configs.push_back(vector_to_json(q));
    json doc = {{"schema_version", kTrajectorySchemaVersion}, {"model", traj.model}, {"configs", configs}};
    if (!traj.timestamps.empty()) doc["timestamps"] = traj.timestamps;
    return doc;
}

Trajectory trajectory_from_json(const json& doc) {
    check_schema_version(doc, kTrajectorySchemaVersion, "trajectory");
    Trajectory traj;
    traj.model = doc.value("model", std::string{});
    const auto& configs = require_field(doc, "configs", "trajectory");
    if (!configs.is_array()) throw ParseError("trajectory.configs: expected an array");
    for (std::size_t i = 0; i < configs.size(); ++i)
        traj.configs.push_back(vector_from_json(configs[i], "trajectory.configs[" + std::to_string(i) + "]"));
    if (doc.contains("timestamps")) {
        const auto t = vector_from_json(doc.at("timestamps"), "trajectory.timestamps");
        traj.timestamps.assign(t.data(), t.data() + t.size());
    }
    try {
        traj.validate();
    } catch (const ValidationError& e) {
        throw ParseError(e.what());
    }
    return traj;
}

Trajectory load_trajectory(const std::filesystem::path& path) {
    try {
        return trajectory_from_json(read_json_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
    traj.validate();
    write_json_file(trajectory_to_json(traj), path);
}

}  // namespace respilot
