#pragma once

#include "respilot/bounded_lsq.hpp"
#include "respilot/bundle.hpp"
#include "respilot/hand_model.hpp"
#include "respilot/hkvm.hpp"
#include "respilot/residual_gp.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace respilot {

enum class RetargeterKind { joint, ik, hkvm, gp_direct, res_gp };

std::string_view to_string(RetargeterKind kind);
/// Throws InvalidInput on an unknown name.
RetargeterKind parse_retargeter_kind(std::string_view name);
std::vector<RetargeterKind> all_retargeter_kinds();
bool needs_bundle(RetargeterKind kind);

// --- stages ----------------------------------------------------------------------------------

struct ResidualCorrection {
    JointConfig q_d;
    std::vector<int> degenerate_fingers;  // fingers that fell back to the base solution
};

/// q_d[f] = a(xi_f + V(q_o[f])) per finger, clamped to the robot limits. A finger whose
/// corrected rows collapse keeps its q_o slice.
ResidualCorrection apply_residual(const HandModel& human, const HandModel& robot, const JointConfig& q_h,
                                  const JointConfig& q_o, const std::vector<TrainedFingerGP>& gps);

/// Direct-GP baseline: q[f] = a(posterior mean) per finger. Degenerate fingers take the
/// matching slice of `fallback`.
ResidualCorrection retarget_gp_direct(const HandModel& human, const HandModel& robot, const JointConfig& q_h,
                                      const std::vector<TrainedFingerGP>& direct_gps, const JointConfig& fallback);

struct ConstraintOptions {
    double tolerance = 5e-4;  // m, reported violation threshold
    double target_tolerance = 1e-7;  // m, the solver keeps tightening until here
    int max_outer = 30;
    double time_budget = 0.3;  // s, <= 0 disables
};

struct ConstraintReport {
    int finger = 0;
    double distance = 0.0;   // achieved thumb-to-fingertip distance, m
    double violation = 0.0;  // |distance - d|
    bool satisfied = true;
};

struct ConstraintResult {
    JointConfig q_c;
    std::vector<ConstraintReport> constraints;
    int outer_iterations = 0;
    bool feasible = true;  // every constraint within tolerance
};

/// Nearest within-limits configuration to q_d (squared joint distance) with
/// ||tip_f - tip_thumb|| = d for every finger f in `fingers`. Augmented Lagrangian around the
/// bounded least-squares solver, warm-started at q_d. Empty `fingers` returns q_d unchanged.
ConstraintResult solve_constraints(const HandModel& robot, const JointConfig& q_d, const std::vector<int>& fingers,
                                   double d, const ConstraintOptions& options = {});

/// lambda * q_c + (1 - lambda) * previous.
JointConfig smooth(const JointConfig& previous, const JointConfig& q_c, double lambda);

struct JointMapResult {
    JointConfig q;
    std::vector<int> zero_width_joints;  // mapped to the robot midpoint
};

/// Per-joint affine map of the human range onto the robot limits, clamped.
JointMapResult retarget_joint(const JointConfig& q_h, const Eigen::VectorXd& human_lo, const Eigen::VectorXd& human_hi,
                              const Eigen::VectorXd& robot_lo, const Eigen::VectorXd& robot_hi);

struct IkRetargetResult {
    JointConfig q;
    Eigen::VectorXd position_error;  // per finger, m
    std::vector<int> unreachable_fingers;  // error above 1 mm
};

/// Per-finger position IK placing each robot fingertip at the unscaled human fingertip.
IkRetargetResult retarget_ik(const HandModel& human, const HandModel& robot, const JointConfig& q_h,
                             const JointConfig& q_init, const LsqOptions& options = {});

// --- sessions --------------------------------------------------------------------------------

/// Models, keypoint spec and (optional) calibration bundle, shared read-only by sessions.
class RetargetContext {
public:
    RetargetContext(HandModel human, HandModel robot, std::optional<CalibrationBundle> bundle = std::nullopt,
                    std::optional<KeypointVectorSpec> spec = std::nullopt);

    const HandModel& human() const { return human_; }
    const HandModel& robot() const { return robot_; }
    const KeypointVectorSpec& spec() const { return spec_; }
    const CalibrationBundle* bundle() const { return bundle_ ? &*bundle_ : nullptr; }
    /// Human joint range used by the joint baseline: the bundle's recorded range, or the
    /// human model limits without a bundle.
    const Eigen::VectorXd& human_range_lo() const { return range_lo_; }
    const Eigen::VectorXd& human_range_hi() const { return range_hi_; }
    /// Bundle HKVM parameters when present, defaults otherwise.
    HkvmParams default_hkvm() const;
    std::vector<std::string> warnings() const { return warnings_; }

private:
    HandModel human_;
    HandModel robot_;
    KeypointVectorSpec spec_;
    std::optional<CalibrationBundle> bundle_;
    Eigen::VectorXd range_lo_;
    Eigen::VectorXd range_hi_;
    std::vector<std::string> warnings_;
};

struct SessionConfig {
    RetargeterKind kind = RetargeterKind::hkvm;
    double smoothing = 0.01;  // lambda_s in (0, 1]
    double distance = 0.01;   // constraint distance d, m
    HkvmParams hkvm;
    ConstraintOptions constraint;
    bool ik_cold_start = false;  // IK from the zero config every tick (stateless)

    /// Throws InvalidInput on out-of-range values.
    void validate() const;
};

struct StageTimings {
    double base = 0.0;        // HKVM / IK / joint map / direct GP
    double residual = 0.0;    // GP posterior means
    double reconstruct = 0.0; // angle reconstruction
    double constraint = 0.0;
    double smoothing = 0.0;
    double total = 0.0;
};

struct RetargetResult {
    JointConfig q_base;    // base retargeter output (q_o* for the HKVM kinds)
    JointConfig q_d;       // desired, before constraints
    JointConfig q_c;       // constrained
    JointConfig q_target;  // smoothed command
    StageTimings timings;
    std::optional<SolverStatus> base_status;
    std::vector<int> degenerate_fingers;
    std::vector<int> zero_width_joints;
    std::vector<int> unreachable_fingers;
    std::vector<ConstraintReport> constraints;
    bool constraints_feasible = true;
};

/// One operator's live retargeting state: warm start, constraint set, filter state.
/// Not thread-safe; drive each session from a single thread.
class RetargetSession {
public:
    RetargetSession(std::shared_ptr<const RetargetContext> context, SessionConfig config);

    const SessionConfig& config() const { return config_; }
    const RetargetContext& context() const { return *context_; }

    /// One tick: base retargeter, residual correction (res_gp), constraints, smoothing.
    RetargetResult step(const JointConfig& q_h);

    /// Turns the thumb-to-`finger` constraint on or off from the next tick.
    void set_constraint(int finger, bool on);
    /// Sorted constrained fingers.
    std::vector<int> constraints() const { return constrained_; }

    void set_kind(RetargeterKind kind);
    /// Replaces the configuration (kind included) and keeps warm starts and filter state.
    void set_config(const SessionConfig& config);
    /// Forgets warm starts and resets the filter to zero.
    void reset();

private:
    std::shared_ptr<const RetargetContext> context_;
    SessionConfig config_;
    std::unique_ptr<HkvmSolver> solver_;
    std::vector<int> constrained_;
    WarmStart hkvm_warm_;
    std::optional<JointConfig> ik_warm_;
    std::optional<JointConfig> last_q_d_;
    JointConfig filter_;
};

}  // namespace respilot
