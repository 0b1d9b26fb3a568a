#include "respilot/calibration.hpp"

#include "respilot/errors.hpp"
#include "respilot/fingertip_ik.hpp"
#include "respilot/io.hpp"
#include "respilot/residual_gp.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <numbers>

namespace respilot {

using nlohmann::json;

bool CalibrationSample::is_active(int finger) const {
    return std::binary_search(active_fingers.begin(), active_fingers.end(), finger);
}

int CalibrationDataset::active_count(int finger) const {
    return static_cast<int>(std::count_if(samples.begin(), samples.end(),
                                          [&](const CalibrationSample& s) { return s.is_active(finger); }));
}

std::vector<std::string> CalibrationDataset::families() const {
    std::vector<std::string> out;
    for (const auto& s : samples)
        if (std::find(out.begin(), out.end(), s.family) == out.end()) out.push_back(s.family);
    return out;
}

void validate_dataset(const CalibrationDataset& dataset, const HandModel& human, const HandModel& robot) {
    if (dataset.samples.empty()) throw ValidationError("calibration dataset: no samples");
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        const std::string where = "calibration sample " + std::to_string(i) + " ('" + s.pose_name + "')";
        if (s.active_fingers.empty()) throw ValidationError(where + ": no active fingers");
        if (!std::is_sorted(s.active_fingers.begin(), s.active_fingers.end()) ||
            std::adjacent_find(s.active_fingers.begin(), s.active_fingers.end()) != s.active_fingers.end())
            throw ValidationError(where + ": active fingers must be sorted and unique");
        for (int f : s.active_fingers)
            if (f < 0 || f >= robot.finger_count()) throw ValidationError(where + ": unknown active finger");
        try {
            human.check_config(s.human, "human config");
            robot.check_config(s.robot, "robot config");
        } catch (const InvalidInput& e) {
            throw ValidationError(where + ": " + e.what());
        }
        if (!within_limits(human, s.human, 1e-9)) throw ValidationError(where + ": human config outside joint limits");
        if (!within_limits(robot, s.robot, 1e-9)) throw ValidationError(where + ": robot config outside joint limits");
    }
    for (int f = 0; f < robot.finger_count(); ++f)
        if (dataset.active_count(f) == 0)
            throw ValidationError("calibration dataset: finger '" + robot.fingers()[static_cast<std::size_t>(f)].name +
                                  "' is never active");
}

// --- file format ----------------------------------------------------------------------------

json dataset_to_json(const CalibrationDataset& dataset, const HandModel& human) {
    json samples = json::array();
    for (const auto& s : dataset.samples) {
        json active = json::array();
        for (int f : s.active_fingers) active.push_back(human.fingers()[static_cast<std::size_t>(f)].name);
        samples.push_back({{"pose_name", s.pose_name},
                           {"family", s.family},
                           {"active_fingers", active},
                           {"human", vector_to_json(s.human)},
                           {"robot", vector_to_json(s.robot)}});
    }
    return {{"schema_version", kDatasetSchemaVersion},
            {"human_model", {{"name", dataset.human_model.name}, {"hash", dataset.human_model.hash}}},
            {"robot_model", {{"name", dataset.robot_model.name}, {"hash", dataset.robot_model.hash}}},
            {"samples", samples}};
}

DatasetLoad dataset_from_json(const json& doc, const HandModel& human, const HandModel& robot) {
    check_schema_version(doc, kDatasetSchemaVersion, "dataset");
    DatasetLoad out;
    auto read_ref = [&](const char* key) {
        const auto& r = require_field(doc, key, "dataset");
        return ModelRef{require_field(r, "name", key).get<std::string>(), require_field(r, "hash", key).get<std::string>()};
    };
    try {
        out.dataset.human_model = read_ref("human_model");
        out.dataset.robot_model = read_ref("robot_model");
        const auto& samples = require_field(doc, "samples", "dataset");
        if (!samples.is_array()) throw ParseError("dataset.samples: expected an array");
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& sj = samples[i];
            const std::string name = sj.is_object() ? sj.value("pose_name", std::string{}) : std::string{};
            const std::string ctx = "dataset.samples[" + std::to_string(i) + "]" + (name.empty() ? "" : " ('" + name + "')");
            CalibrationSample s;
            s.pose_name = require_field(sj, "pose_name", ctx).get<std::string>();
            s.family = sj.value("family", std::string{});
            const auto& active = require_field(sj, "active_fingers", ctx);
            if (!active.is_array()) throw ParseError(ctx + ".active_fingers: expected an array of finger names");
            for (const auto& a : active) {
                try {
                    s.active_fingers.push_back(human.finger_index(a.get<std::string>()));
                } catch (const InvalidInput& e) {
                    throw ParseError(ctx + ".active_fingers: " + e.what());
                }
            }
            std::sort(s.active_fingers.begin(), s.active_fingers.end());
            s.active_fingers.erase(std::unique(s.active_fingers.begin(), s.active_fingers.end()), s.active_fingers.end());
            s.human = vector_from_json(require_field(sj, "human", ctx), ctx + ".human");
            s.robot = vector_from_json(require_field(sj, "robot", ctx), ctx + ".robot");
            out.dataset.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("dataset: ") + e.what());
    }
    if (out.dataset.human_model.name != human.name() || out.dataset.human_model.hash != model_hash(human))
        out.warnings.push_back("dataset was recorded for human model '" + out.dataset.human_model.name + "' (" +
                               out.dataset.human_model.hash + "), loaded with '" + human.name() + "' (" +
                               model_hash(human) + ")");
    if (out.dataset.robot_model.name != robot.name() || out.dataset.robot_model.hash != model_hash(robot))
        out.warnings.push_back("dataset was recorded for robot model '" + out.dataset.robot_model.name + "' (" +
                               out.dataset.robot_model.hash + "), loaded with '" + robot.name() + "' (" +
                               model_hash(robot) + ")");
    validate_dataset(out.dataset, human, robot);
    return out;
}

DatasetLoad load_dataset(const std::filesystem::path& path, const HandModel& human, const HandModel& robot) {
    try {
        return dataset_from_json(read_json_file(path), human, robot);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void save_dataset(const CalibrationDataset& dataset, const HandModel& human, const std::filesystem::path& path) {
    write_json_file(dataset_to_json(dataset, human), path);
}

// --- targets --------------------------------------------------------------------------------

std::vector<JointConfig> hkvm_labels(const CalibrationDataset& dataset, const HkvmSolver& solver) {
    std::vector<JointConfig> out;
    out.reserve(dataset.samples.size());
    for (const auto& s : dataset.samples) out.push_back(solver.solve(s.human, WarmStart{}).q);
    return out;
}

FingerTrainingSet build_residual_targets(const CalibrationDataset& dataset,
                                         const std::vector<JointConfig>& hkvm_solutions, const HandModel& human,
                                         const HandModel& robot, int finger) {
    if (hkvm_solutions.size() != dataset.samples.size())
        throw InvalidInput("build_residual_targets: one HKVM solution per sample required");
    const FingerSlice hs = human.slice(finger);
    const FingerSlice rs = robot.slice(finger);
    FingerTrainingSet set;
    set.finger = finger;
    const int c = dataset.active_count(finger);
    if (c == 0) throw NoDataError("finger " + std::to_string(finger) + " is never active in the calibration set");
    set.inputs.resize(c, hs.count);
    int row = 0;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        if (!s.is_active(finger)) continue;
        const Eigen::VectorXd robot_f = s.robot.segment(rs.offset, rs.count);
        const Eigen::VectorXd base_f = hkvm_solutions[i].segment(rs.offset, rs.count);
        const Eigen::RowVectorXd target = vectorize_residual(v_map(robot_f) - v_map(base_f));
        if (set.targets.size() == 0) set.targets.resize(c, target.size());
        set.inputs.row(row) = s.human.segment(hs.offset, hs.count).transpose();
        set.targets.row(row) = target;
        set.sample_indices.push_back(static_cast<int>(i));
        ++row;
    }
    return set;
}

FingerTrainingSet build_residual_targets(const CalibrationDataset& dataset, const HkvmSolver& solver, int finger) {
    if (dataset.active_count(finger) == 0)
        throw NoDataError("finger " + std::to_string(finger) + " is never active in the calibration set");
    return build_residual_targets(dataset, hkvm_labels(dataset, solver), solver.human(), solver.robot(), finger);
}

FingerTrainingSet build_direct_targets(const CalibrationDataset& dataset, const HandModel& human,
                                       const HandModel& robot, int finger) {
    const FingerSlice hs = human.slice(finger);
    const FingerSlice rs = robot.slice(finger);
    const int c = dataset.active_count(finger);
    if (c == 0) throw NoDataError("finger " + std::to_string(finger) + " is never active in the calibration set");
    FingerTrainingSet set;
    set.finger = finger;
    set.inputs.resize(c, hs.count);
    set.targets.resize(c, 2 * rs.count);
    int row = 0;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        if (!s.is_active(finger)) continue;
        set.inputs.row(row) = s.human.segment(hs.offset, hs.count).transpose();
        set.targets.row(row) = vectorize_residual(v_map(s.robot.segment(rs.offset, rs.count)));
        set.sample_indices.push_back(static_cast<int>(i));
        ++row;
    }
    return set;
}

// --- synthetic generator --------------------------------------------------------------------

CalibrationWarp hkvm_warp(const HkvmSolver& solver) {
    auto cold = std::make_shared<const HkvmSolver>(solver.unbudgeted());
    return [cold](const JointConfig& q_h) { return cold->solve(q_h, WarmStart{}).q; };
}

CalibrationWarp expansion_warp(const HkvmSolver& solver, double gain, double margin) {
    if (!(gain >= 0.0) || !(margin >= 0.0 && margin < 0.5)) throw InvalidInput("expansion_warp: bad gain/margin");
    auto cold = std::make_shared<const HkvmSolver>(solver.unbudgeted());
    return [cold, gain, margin](const JointConfig& q_h) {
        JointConfig q = cold->solve(q_h, WarmStart{}).q;
        const HandModel& robot = cold->robot();
        for (int j = 0; j < robot.dof(); ++j) {
            const JointLimits lim = robot.limits(j);
            const double u = (q[j] - lim.lo) / lim.width();
            const double expanded = std::clamp(0.5 + (1.0 + gain) * (u - 0.5), margin, 1.0 - margin);
            q[j] = lim.lo + expanded * lim.width();
        }
        return q;
    };
}

namespace {

// Joint order of the non-thumb fingers: abduction, MCP, PIP, DIP.
Eigen::Vector4d finger_pose(double abd, double mcp, double pip, double dip) { return {abd, mcp, pip, dip}; }

struct PoseDraft {
    std::string name;
    std::string family;
    JointConfig human;
    std::vector<int> active;
};

void set_finger(const HandModel& model, JointConfig& q, int finger, const Eigen::VectorXd& angles) {
    const FingerSlice s = model.slice(finger);
    const Eigen::Index n = std::min<Eigen::Index>(s.count, angles.size());
    q.segment(s.offset, n) = angles.head(n);
}

}  // namespace

CalibrationDataset generate_synthetic_calibration(std::uint64_t seed, const HandModel& human, const HandModel& robot,
                                                  const CalibrationWarp& warp) {
    validate_hand_layout(human);
    validate_hand_layout(robot);
    Rng rng(seed);
    constexpr int kThumb = kThumbFinger;
    const std::vector<int> others{1, 2, 3};

    const Eigen::Vector4d relaxed = finger_pose(0.0, 0.3, 0.3, 0.2);
    const Eigen::Vector4d thumb_relaxed(0.0, 0.2, 0.2, 0.2);
    auto base_pose = [&] {
        JointConfig q = JointConfig::Zero(human.dof());
        set_finger(human, q, kThumb, thumb_relaxed);
        for (int f : others) set_finger(human, q, f, relaxed);
        return q;
    };

    // Thumb meets the finger's tip, starting from an opposed thumb posture.
    auto pinch = [&](int finger, const Eigen::Vector4d& finger_angles) {
        JointConfig q = base_pose();
        set_finger(human, q, finger, finger_angles);
        set_finger(human, q, kThumb, Eigen::Vector4d(-0.4, 0.5, 0.4, 0.3));
        q = clamp_to_limits(human, q);
        const Eigen::Vector3d target = fingertip_position(human, q, finger);
        LsqOptions opts;
        opts.time_budget = 0.0;
        opts.max_iters = 300;
        opts.grad_tol = 1e-12;
        return solve_fingertip_ik(human, q, kThumb, target, opts).q;
    };

    std::vector<PoseDraft> drafts;
    const std::vector<double> toward_thumb{0.05, 0.1, 0.2};
    for (int f : others) {
        const std::string fname = human.fingers()[static_cast<std::size_t>(f)].name;
        const double abd = toward_thumb[static_cast<std::size_t>(f - 1)];
        const JointConfig near = pinch(f, finger_pose(abd, 1.2, 1.3, 0.9));
        const JointConfig far = pinch(f, finger_pose(0.5 * abd, 0.45, 0.3, 0.2));
        drafts.push_back({"pinch_near_" + fname, "pinch_near", near, {kThumb, f}});
        drafts.push_back({"pinch_mid_" + fname, "pinch_mid", 0.5 * (near + far), {kThumb, f}});
        drafts.push_back({"pinch_far_" + fname, "pinch_far", far, {kThumb, f}});
    }

    auto all_fingers = [&](const Eigen::Vector4d& pose) {
        JointConfig q = base_pose();
        for (int f : others) set_finger(human, q, f, pose);
        return q;
    };
    const JointConfig fist = all_fingers(finger_pose(0.0, 1.45, 1.6, 1.2));
    const JointConfig open = all_fingers(finger_pose(0.0, 0.0, 0.05, 0.05));
    drafts.push_back({"power_fist", "power", fist, others});
    drafts.push_back({"power_half", "power", 0.5 * (fist + open), others});
    drafts.push_back({"power_open", "power", open, others});

    for (int f : others) {
        const std::string fname = human.fingers()[static_cast<std::size_t>(f)].name;
        JointConfig hook = base_pose();
        set_finger(human, hook, f, finger_pose(0.0, 0.1, 1.5, 1.2));
        JointConfig table = base_pose();
        set_finger(human, table, f, finger_pose(0.0, 1.4, 0.1, 0.05));
        drafts.push_back({"hook_" + fname, "hook", hook, {f}});
        drafts.push_back({"tabletop_" + fname, "tabletop", table, {f}});
    }

    JointConfig spread = base_pose();
    JointConfig together = base_pose();
    const std::vector<double> spread_abd{0.3, 0.0, -0.3};
    const std::vector<double> together_abd{-0.12, 0.0, 0.12};
    for (int f : others) {
        set_finger(human, spread, f, finger_pose(spread_abd[static_cast<std::size_t>(f - 1)], 0.1, 0.1, 0.05));
        set_finger(human, together, f, finger_pose(together_abd[static_cast<std::size_t>(f - 1)], 0.1, 0.1, 0.05));
    }
    drafts.push_back({"abduction_spread", "abduction", spread, others});
    drafts.push_back({"abduction_mid", "abduction", 0.5 * (spread + together), others});
    drafts.push_back({"abduction_together", "abduction", together, others});

    JointConfig thumb_out = base_pose();
    set_finger(human, thumb_out, kThumb, Eigen::Vector4d(0.3, -0.25, 0.0, 0.0));
    JointConfig thumb_in = base_pose();
    set_finger(human, thumb_in, kThumb, Eigen::Vector4d(-0.9, 0.95, 0.9, 0.8));
    drafts.push_back({"thumb_out", "thumb", thumb_out, {kThumb}});
    drafts.push_back({"thumb_mid", "thumb", 0.5 * (thumb_out + thumb_in), {kThumb}});
    drafts.push_back({"thumb_palm_base", "thumb", thumb_in, {kThumb}});

    CalibrationDataset dataset;
    dataset.human_model = ModelRef::of(human);
    dataset.robot_model = ModelRef::of(robot);
    for (auto& d : drafts) {
        JointConfig q_h = d.human;
        for (Eigen::Index j = 0; j < q_h.size(); ++j) q_h[j] += 0.02 * rng.normal();
        q_h = clamp_to_limits(human, q_h);
        JointConfig q_r = warp(q_h);
        robot.check_config(q_r, "warp output");
        if (!within_limits(robot, q_r, 1e-12))
            throw ValidationError("synthetic calibration: warp output for '" + d.name + "' leaves the robot limits");
        dataset.samples.push_back({d.name, d.family, std::move(q_h), std::move(q_r), d.active});
    }
    validate_dataset(dataset, human, robot);
    return dataset;
}

Trajectory generate_sweep_trajectory(std::uint64_t seed, const CalibrationDataset& dataset, const HandModel& human,
                                     int steps_per_segment) {
    if (dataset.samples.empty()) throw NoDataError("sweep trajectory: empty calibration set");
    if (steps_per_segment < 1) throw InvalidInput("sweep trajectory: steps_per_segment must be >= 1");
    Rng rng(seed);

    std::vector<JointConfig> keys;
    for (const auto& s : dataset.samples) keys.push_back(s.human);
    std::vector<std::size_t> order(dataset.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_u64() % i]);
    for (std::size_t i : order) keys.push_back(dataset.samples[i].human);
    keys.push_back(dataset.samples.front().human);

    Trajectory traj;
    traj.model = human.name();
    constexpr double kDt = 0.05;
    for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
        for (int step = 0; step < steps_per_segment; ++step) {
            const double t = static_cast<double>(step) / steps_per_segment;
            const double blend = 0.5 - 0.5 * std::cos(std::numbers::pi * t);
            JointConfig q = (1.0 - blend) * keys[k] + blend * keys[k + 1];
            for (Eigen::Index j = 0; j < q.size(); ++j) q[j] += 0.005 * rng.normal();
            traj.configs.push_back(clamp_to_limits(human, q));
        }
    }
    traj.configs.push_back(keys.back());
    for (std::size_t i = 0; i < traj.configs.size(); ++i) traj.timestamps.push_back(kDt * static_cast<double>(i));
    return traj;
}

}  // namespace respilot
