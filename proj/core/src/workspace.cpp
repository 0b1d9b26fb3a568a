#include "respilot/workspace.hpp"

#include "respilot/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <unordered_set>

namespace respilot {

namespace {

using Cell = std::vector<std::int64_t>;

struct CellHash {
    std::size_t operator()(const Cell& c) const noexcept {
        std::uint64_t h = 1469598103934665603ULL;
        for (std::int64_t v : c) {
            h ^= static_cast<std::uint64_t>(v) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
            h *= 1099511628211ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

std::int64_t cell_index(double x, double delta) { return static_cast<std::int64_t>(std::floor(x / delta)); }

void check_inputs(const std::vector<JointConfig>& configs, const HandModel& model, double delta) {
    if (!(delta > 0.0)) throw InvalidInput("voxel size must be > 0");
    for (const auto& q : configs) model.check_config(q, "trajectory config");
}

}  // namespace

WorkspaceVolume joint_workspace(const std::vector<JointConfig>& configs, const HandModel& model, double delta) {
    check_inputs(configs, model, delta);
    WorkspaceVolume out;
    for (int f = 0; f < model.finger_count(); ++f) {
        const FingerSlice s = model.slice(f);
        std::unordered_set<Cell, CellHash> cells;
        Cell key(static_cast<std::size_t>(s.count));
        for (const auto& q : configs) {
            for (int j = 0; j < s.count; ++j) key[static_cast<std::size_t>(j)] = cell_index(q[s.offset + j], delta);
            cells.insert(key);
        }
        const double v = static_cast<double>(cells.size()) * std::pow(delta, s.count);
        out.cells.push_back(cells.size());
        out.per_finger.push_back(v);
        out.total += v;
    }
    return out;
}

WorkspaceVolume fingertip_workspace(const std::vector<JointConfig>& configs, const HandModel& model, double delta) {
    check_inputs(configs, model, delta);
    const int fingers = model.finger_count();
    std::vector<std::unordered_set<Cell, CellHash>> cells(static_cast<std::size_t>(fingers));
    Cell key(3);
    for (const auto& q : configs) {
        const std::vector<Eigen::Vector3d> kp = forward_kinematics(model, q);
        for (int f = 0; f < fingers; ++f) {
            const Eigen::Vector3d& p = kp[static_cast<std::size_t>(1 + f)];
            for (int a = 0; a < 3; ++a) key[static_cast<std::size_t>(a)] = cell_index(p[a], delta);
            cells[static_cast<std::size_t>(f)].insert(key);
        }
    }
    const double cell_cm3 = std::pow(delta * 100.0, 3);
    WorkspaceVolume out;
    for (const auto& set : cells) {
        const double v = static_cast<double>(set.size()) * cell_cm3;
        out.cells.push_back(set.size());
        out.per_finger.push_back(v);
        out.total += v;
    }
    return out;
}

const WorkspaceRow* WorkspaceReport::find(std::string_view retargeter) const {
    for (const auto& r : rows)
        if (r.retargeter == retargeter) return &r;
    return nullptr;
}

WorkspaceReport compare_retargeters(std::shared_ptr<const RetargetContext> context, const Trajectory& human_traj,
                                    const std::vector<RetargeterKind>& kinds, const SessionConfig& base_config,
                                    double delta_joint, double delta_tip) {
    human_traj.validate();
    if (!(delta_joint > 0.0) || !(delta_tip > 0.0)) throw InvalidInput("voxel sizes must be > 0");
    const HandModel& robot = context->robot();
    WorkspaceReport report;
    report.delta_joint = delta_joint;
    report.delta_tip = delta_tip;
    for (const auto& f : robot.fingers()) report.fingers.push_back(f.name);
    for (RetargeterKind kind : kinds) {
        SessionConfig cfg = base_config;
        cfg.kind = kind;
        RetargetSession session(context, cfg);
        std::vector<JointConfig> out;
        out.reserve(human_traj.size());
        for (const auto& q_h : human_traj.configs) out.push_back(session.step(q_h).q_c);
        report.rows.push_back({std::string(to_string(kind)), joint_workspace(out, robot, delta_joint),
                               fingertip_workspace(out, robot, delta_tip)});
    }
    return report;
}

nlohmann::json report_to_json(const WorkspaceReport& report) {
    nlohmann::json doc;
    doc["delta_joint_rad"] = report.delta_joint;
    doc["delta_tip_m"] = report.delta_tip;
    doc["fingers"] = report.fingers;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"retargeter", r.retargeter},
                        {"joint_ws_rad4", r.joint.total},
                        {"fingertip_ws_cm3", r.fingertip.total},
                        {"joint_ws_per_finger", r.joint.per_finger},
                        {"fingertip_ws_per_finger", r.fingertip.per_finger},
                        {"joint_cells", r.joint.cells},
                        {"fingertip_cells", r.fingertip.cells}});
    }
    doc["rows"] = rows;
    return doc;
}

std::string report_to_table(const WorkspaceReport& report) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %18s %20s\n", "retargeter", "joint WS (rad^4)", "fingertip WS (cm^3)");
    os << buf;
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%-12s %18.6g %20.4f\n", r.retargeter.c_str(), r.joint.total, r.fingertip.total);
        os << buf;
    }
    os << "\nper finger (joint rad^4 / fingertip cm^3)\n";
    std::snprintf(buf, sizeof buf, "%-12s", "retargeter");
    os << buf;
    for (const auto& f : report.fingers) {
        std::snprintf(buf, sizeof buf, " %22s", f.c_str());
        os << buf;
    }
    os << '\n';
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%-12s", r.retargeter.c_str());
        os << buf;
        for (std::size_t f = 0; f < r.joint.per_finger.size(); ++f) {
            std::snprintf(buf, sizeof buf, " %11.4g / %8.3f", r.joint.per_finger[f], r.fingertip.per_finger[f]);
            os << buf;
        }
        os << '\n';
    }
    std::snprintf(buf, sizeof buf, "\ndelta_joint = %g rad, delta_tip = %g m\n", report.delta_joint, report.delta_tip);
    os << buf;
    return os.str();
}

}  // namespace respilot
