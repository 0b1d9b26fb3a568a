#include "respilot/hand_model.hpp"

#include "respilot/errors.hpp"
#include "respilot/io.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace respilot {

using nlohmann::json;

Eigen::Isometry3d Origin::transform() const {
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.translation() = xyz;
    t.linear() = (Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) *
                  Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
                  Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX()))
                     .toRotationMatrix();
    return t;
}

HandModel::HandModel(std::string name, Origin palm_frame, std::vector<FingerChain> fingers, std::string description)
    : name_(std::move(name)), description_(std::move(description)), palm_frame_(std::move(palm_frame)),
      fingers_(std::move(fingers)) {
    if (name_.empty()) throw ValidationError("hand model: empty name");
    if (fingers_.empty()) throw ValidationError("hand model '" + name_ + "': no fingers");

    std::set<std::string> finger_names;
    keypoint_ids_.emplace_back(kPalmKeypoint);
    for (std::size_t f = 0; f < fingers_.size(); ++f) {
        auto& finger = fingers_[f];
        if (finger.name.empty())
            throw ValidationError("hand model '" + name_ + "': finger " + std::to_string(f) +
                                  " has no name");
        if (!finger_names.insert(finger.name).second)
            throw ValidationError("hand model '" + name_ + "': duplicate finger '" + finger.name + "'");
        if (finger.joints.empty())
            throw ValidationError("hand model '" + name_ + "': finger '" + finger.name +
                                  "' has no joints");
        slices_.push_back({dof_, static_cast<int>(finger.joints.size())});
        for (std::size_t j = 0; j < finger.joints.size(); ++j) {
            auto& joint = finger.joints[j];
            const std::string where = "finger '" + finger.name + "' joint " + std::to_string(j);
            if (!(joint.limits.lo < joint.limits.hi))
                throw ValidationError("hand model '" + name_ + "': " + where +
                                      ": joint limits need lo < hi");
            const double n = joint.axis.norm();
            if (!(n > 1e-12) || !std::isfinite(n))
                throw ValidationError("hand model '" + name_ + "': " + where + ": zero axis");
            joint.axis /= n;
            joint_finger_.push_back(static_cast<int>(f));
            ++dof_;
        }
        keypoint_ids_.push_back(finger.name + "_tip");
    }
    lower_.resize(dof_);
    upper_.resize(dof_);
    int k = 0;
    for (const auto& finger : fingers_) {
        for (const auto& joint : finger.joints) {
            lower_[k] = joint.limits.lo;
            upper_[k] = joint.limits.hi;
            ++k;
        }
    }
    palm_from_root_ = palm_frame_.transform().inverse();
}

int HandModel::keypoint_index(std::string_view id) const {
    auto it = std::find(keypoint_ids_.begin(), keypoint_ids_.end(), id);
    if (it == keypoint_ids_.end())
        throw InvalidInput("hand model '" + name_ + "': unknown keypoint '" + std::string(id) + "'");
    return static_cast<int>(it - keypoint_ids_.begin());
}

int HandModel::finger_index(std::string_view finger_name) const {
    for (int f = 0; f < finger_count(); ++f)
        if (fingers_[static_cast<std::size_t>(f)].name == finger_name) return f;
    throw InvalidInput("hand model '" + name_ + "': unknown finger '" + std::string(finger_name) + "'");
}

double HandModel::chain_length(int finger) const {
    const auto& chain = fingers_.at(static_cast<std::size_t>(finger));
    double total = chain.fingertip_offset.norm();
    for (std::size_t j = 1; j < chain.joints.size(); ++j) total += chain.joints[j].origin.xyz.norm();
    return total;
}

void HandModel::check_config(const JointConfig& q, std::string_view what) const {
    if (q.size() != dof_)
        throw InvalidInput(std::string(what) + ": expected " + std::to_string(dof_) +
                           " angles for model '" + name_ + "', got " + std::to_string(q.size()));
    if (!q.allFinite()) throw InvalidInput(std::string(what) + ": non-finite angle");
}

void validate_hand_layout(const HandModel& model) {
    if (model.finger_count() != kFingerCount)
        throw ValidationError("hand model '" + model.name() + "': expected exactly " +
                              std::to_string(kFingerCount) + " fingers, found " +
                              std::to_string(model.finger_count()));
}

namespace {

// Frames are tracked in the root frame and mapped to the palm frame at the end.
struct ChainWalk {
    Eigen::Vector3d tip;
    std::vector<Eigen::Vector3d> axes;     // world joint axes
    std::vector<Eigen::Vector3d> origins;  // world joint positions
};

ChainWalk walk_chain(const HandModel& model, const JointConfig& q, int finger, bool with_axes) {
    const auto& chain = model.fingers()[static_cast<std::size_t>(finger)];
    const FingerSlice s = model.slice(finger);
    Eigen::Isometry3d t = model.palm_from_root() * chain.base.transform();
    ChainWalk out;
    if (with_axes) {
        out.axes.reserve(chain.joints.size());
        out.origins.reserve(chain.joints.size());
    }
    for (int j = 0; j < s.count; ++j) {
        const auto& joint = chain.joints[static_cast<std::size_t>(j)];
        t = t * joint.origin.transform();
        if (with_axes) {
            out.axes.push_back(t.linear() * joint.axis);
            out.origins.push_back(t.translation());
        }
        t.rotate(Eigen::AngleAxisd(q[s.offset + j], joint.axis));
    }
    out.tip = t * chain.fingertip_offset;
    return out;
}

}  // namespace

std::vector<Eigen::Vector3d> forward_kinematics(const HandModel& model, const JointConfig& q) {
    model.check_config(q);
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(static_cast<std::size_t>(model.keypoint_count()));
    pts.emplace_back(Eigen::Vector3d::Zero());
    for (int f = 0; f < model.finger_count(); ++f) pts.push_back(walk_chain(model, q, f, false).tip);
    return pts;
}

Eigen::Vector3d fingertip_position(const HandModel& model, const JointConfig& q, int finger) {
    model.check_config(q);
    return walk_chain(model, q, finger, false).tip;
}

void fingertip_kinematics(const HandModel& model, const JointConfig& q, int finger,
                          Eigen::Vector3d& position, Eigen::Matrix3Xd& jacobian) {
    model.check_config(q);
    const ChainWalk w = walk_chain(model, q, finger, true);
    position = w.tip;
    jacobian.resize(3, static_cast<Eigen::Index>(w.axes.size()));
    for (std::size_t j = 0; j < w.axes.size(); ++j)
        jacobian.col(static_cast<Eigen::Index>(j)) = w.axes[j].cross(w.tip - w.origins[j]);
}

Eigen::Matrix3Xd fingertip_jacobian(const HandModel& model, const JointConfig& q, int finger) {
    Eigen::Vector3d p;
    Eigen::Matrix3Xd jac;
    fingertip_kinematics(model, q, finger, p, jac);
    return jac;
}

KeypointVectorSpec KeypointVectorSpec::default_for(const HandModel& model) {
    KeypointVectorSpec spec;
    const int n = model.finger_count();
    for (int f = 0; f < n; ++f) spec.pairs.push_back({0, 1 + f});
    // finger 0 is the thumb
    for (int f = 1; f < n; ++f) spec.pairs.push_back({1, 1 + f});
    for (int a = 1; a < n; ++a)
        for (int b = a + 1; b < n; ++b) spec.pairs.push_back({1 + a, 1 + b});
    return spec;
}

KeypointVectorSpec KeypointVectorSpec::from_names(
    const HandModel& model, const std::vector<std::pair<std::string, std::string>>& names) {
    KeypointVectorSpec spec;
    for (const auto& [from, to] : names)
        spec.pairs.push_back({model.keypoint_index(from), model.keypoint_index(to)});
    validate_keypoint_spec(model, spec);
    return spec;
}

void validate_keypoint_spec(const HandModel& model, const KeypointVectorSpec& spec) {
    std::set<std::pair<int, int>> seen;
    for (const auto& p : spec.pairs) {
        if (p.from < 0 || p.from >= model.keypoint_count() || p.to < 0 || p.to >= model.keypoint_count())
            throw InvalidInput("keypoint vector spec: keypoint index out of range");
        if (!seen.insert({p.from, p.to}).second)
            throw InvalidInput("keypoint vector spec: repeated pair (" +
                               model.keypoint_ids()[static_cast<std::size_t>(p.from)] + ", " +
                               model.keypoint_ids()[static_cast<std::size_t>(p.to)] + ")");
    }
}

Eigen::Vector3d keypoint_vector(const HandModel& model, const JointConfig& q, int pair_index,
                                const KeypointVectorSpec& spec) {
    if (pair_index < 0 || pair_index >= spec.size())
        throw InvalidInput("keypoint vector index " + std::to_string(pair_index) + " outside [0, " +
                           std::to_string(spec.size()) + ")");
    const auto& p = spec.pairs[static_cast<std::size_t>(pair_index)];
    model.check_config(q);
    auto point = [&](int kp) -> Eigen::Vector3d {
        if (kp == 0) return Eigen::Vector3d::Zero();
        return walk_chain(model, q, kp - 1, false).tip;
    };
    return point(p.to) - point(p.from);
}

JointConfig clamp_to_limits(const HandModel& model, const JointConfig& q) {
    if (q.size() != model.dof())
        throw InvalidInput("clamp_to_limits: expected " + std::to_string(model.dof()) + " angles");
    return q.cwiseMax(model.lower()).cwiseMin(model.upper());
}

bool within_limits(const HandModel& model, const JointConfig& q, double tol) {
    if (q.size() != model.dof()) return false;
    return ((q.array() >= model.lower().array() - tol) && (q.array() <= model.upper().array() + tol)).all();
}

// --- serialization --------------------------------------------------------------------------

namespace {

Eigen::Vector3d vec3(const json& arr, const std::string& ctx) {
    Eigen::VectorXd v = vector_from_json(arr, ctx);
    if (v.size() != 3) throw ParseError(ctx + ": expected 3 numbers");
    return v;
}

json vec3_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Origin origin_from_json(const json& j, const std::string& ctx) {
    Origin o;
    o.xyz = vec3(require_field(j, "xyz", ctx), ctx + ".xyz");
    if (j.contains("rpy")) o.rpy = vec3(j.at("rpy"), ctx + ".rpy");
    return o;
}

json origin_json(const Origin& o) { return {{"xyz", vec3_json(o.xyz)}, {"rpy", vec3_json(o.rpy)}}; }

}  // namespace

HandModel model_from_json(const json& doc) {
    check_schema_version(doc, kHandModelSchemaVersion, "hand model");
    const auto name = require_field(doc, "name", "hand model").get<std::string>();
    const std::string ctx = "hand model '" + name + "'";
    Origin palm;
    if (doc.contains("palm_frame")) palm = origin_from_json(doc.at("palm_frame"), ctx + ".palm_frame");
    const auto& fingers_json = require_field(doc, "fingers", ctx);
    if (!fingers_json.is_array()) throw ParseError(ctx + ".fingers: expected an array");

    std::vector<FingerChain> fingers;
    for (std::size_t f = 0; f < fingers_json.size(); ++f) {
        const auto& fj = fingers_json[f];
        const std::string fctx = ctx + ".fingers[" + std::to_string(f) + "]";
        FingerChain chain;
        try {
            chain.name = require_field(fj, "name", fctx).get<std::string>();
            chain.base = origin_from_json(require_field(fj, "base", fctx), fctx + ".base");
            chain.fingertip_offset =
                vec3(require_field(fj, "fingertip_offset", fctx), fctx + ".fingertip_offset");
            const auto& joints = require_field(fj, "joints", fctx);
            if (!joints.is_array()) throw ParseError(fctx + ".joints: expected an array");
            for (std::size_t j = 0; j < joints.size(); ++j) {
                const auto& jj = joints[j];
                const std::string jctx = fctx + ".joints[" + std::to_string(j) + "]";
                JointSpec joint;
                joint.name = jj.value("name", chain.name + "_" + std::to_string(j));
                joint.origin = origin_from_json(require_field(jj, "origin", jctx), jctx + ".origin");
                joint.axis = vec3(require_field(jj, "axis", jctx), jctx + ".axis");
                const auto lim = vector_from_json(require_field(jj, "limits", jctx), jctx + ".limits");
                if (lim.size() != 2) throw ParseError(jctx + ".limits: expected [lo, hi]");
                joint.limits = {lim[0], lim[1]};
                chain.joints.push_back(std::move(joint));
            }
        } catch (const json::exception& e) {
            throw ParseError(fctx + ": " + e.what());
        }
        fingers.push_back(std::move(chain));
    }
    HandModel model(name, palm, std::move(fingers), doc.value("description", std::string{}));
    validate_hand_layout(model);
    return model;
}

json model_to_json(const HandModel& model) {
    json fingers = json::array();
    for (const auto& chain : model.fingers()) {
        json joints = json::array();
        for (const auto& joint : chain.joints) {
            joints.push_back({{"name", joint.name},
                              {"origin", origin_json(joint.origin)},
                              {"axis", vec3_json(joint.axis)},
                              {"limits", json::array({joint.limits.lo, joint.limits.hi})}});
        }
        fingers.push_back({{"name", chain.name},
                           {"base", origin_json(chain.base)},
                           {"joints", joints},
                           {"fingertip_offset", vec3_json(chain.fingertip_offset)}});
    }
    return {{"schema_version", kHandModelSchemaVersion},
            {"name", model.name()},
            {"description", model.description()},
            {"palm_frame", origin_json(model.palm_frame())},
            {"fingers", fingers}};
}

HandModel load_model(const std::filesystem::path& path) {
    const json doc = read_json_file(path);
    try {
        return model_from_json(doc);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_model(const HandModel& model, const std::filesystem::path& path) {
    write_json_file(model_to_json(model), path);
}

std::string model_hash(const HandModel& model) { return fnv1a_hex(model_to_json(model).dump()); }

}  // namespace respilot
