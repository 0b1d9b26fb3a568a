#include "respilot/bundle.hpp"

#include "respilot/errors.hpp"
#include "respilot/io.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <future>

namespace respilot {

using nlohmann::json;

std::string CalibrationBundle::id() const { return fnv1a_hex(dump_canonical(bundle_to_json(*this))); }

KeypointVectorSpec bundle_keypoint_spec(const CalibrationBundle& bundle, const HandModel& model) {
    if (bundle.keypoint_pairs.empty()) return KeypointVectorSpec::default_for(model);
    return KeypointVectorSpec::from_names(model, bundle.keypoint_pairs);
}

void validate_bundle(const CalibrationBundle& bundle, const HandModel& human, const HandModel& robot) {
    const int fingers = robot.finger_count();
    if (human.finger_count() != fingers) throw ValidationError("bundle: human and robot finger counts differ");
    auto check_set = [&](const std::vector<TrainedFingerGP>& gps, std::string_view what) {
        if (static_cast<int>(gps.size()) != fingers)
            throw ValidationError("bundle: expected " + std::to_string(fingers) + " " + std::string(what) +
                                  " GPs, found " + std::to_string(gps.size()));
        for (int f = 0; f < fingers; ++f) {
            const auto& gp = gps[static_cast<std::size_t>(f)];
            if (gp.finger() != f)
                throw ValidationError("bundle: " + std::string(what) + " GP " + std::to_string(f) + " is for finger " +
                                      std::to_string(gp.finger()));
            if (gp.joints() != human.slice(f).count || gp.hyper().outputs() != 2 * robot.slice(f).count)
                throw ValidationError("bundle: " + std::string(what) + " GP for finger '" +
                                      robot.fingers()[static_cast<std::size_t>(f)].name +
                                      "' does not match the models' joint counts");
        }
    };
    check_set(bundle.residual, "residual");
    if (bundle.has_direct()) check_set(bundle.direct, "direct");
    if (bundle.human_range_lo.size() != human.dof() || bundle.human_range_hi.size() != human.dof())
        throw ValidationError("bundle: human range has wrong length");
    bundle.hkvm.validate();
    bundle_keypoint_spec(bundle, robot);
    bundle_keypoint_spec(bundle, human);
}

json bundle_to_json(const CalibrationBundle& b) {
    json doc;
    doc["schema_version"] = kBundleSchemaVersion;
    doc["human_model"] = {{"name", b.human_model.name}, {"hash", b.human_model.hash}};
    doc["robot_model"] = {{"name", b.robot_model.name}, {"hash", b.robot_model.hash}};
    doc["hkvm"] = {{"beta", b.hkvm.beta},
                   {"gamma", b.hkvm.gamma},
                   {"time_budget", b.hkvm.time_budget},
                   {"max_iters", b.hkvm.max_iters},
                   {"grad_tol", b.hkvm.grad_tol}};
    json pairs = json::array();
    for (const auto& [from, to] : b.keypoint_pairs) pairs.push_back({from, to});
    doc["keypoint_pairs"] = pairs;
    doc["human_range"] = {{"lo", vector_to_json(b.human_range_lo)}, {"hi", vector_to_json(b.human_range_hi)}};
    json residual = json::array();
    for (const auto& gp : b.residual) residual.push_back(gp.to_json());
    doc["residual_gps"] = residual;
    json direct = json::array();
    for (const auto& gp : b.direct) direct.push_back(gp.to_json());
    doc["direct_gps"] = direct;
    return doc;
}

namespace {

ModelRef ref_from_json(const json& doc, std::string_view key) {
    const json& r = require_field(doc, key, "bundle");
    try {
        return {r.at("name").get<std::string>(), r.at("hash").get<std::string>()};
    } catch (const json::exception& e) {
        throw ParseError("bundle." + std::string(key) + ": " + e.what());
    }
}

}  // namespace

CalibrationBundle bundle_from_json(const json& doc) {
    check_schema_version(doc, kBundleSchemaVersion, "bundle");
    CalibrationBundle b;
    b.human_model = ref_from_json(doc, "human_model");
    b.robot_model = ref_from_json(doc, "robot_model");
    try {
        const json& h = require_field(doc, "hkvm", "bundle");
        b.hkvm.beta = h.at("beta").get<double>();
        b.hkvm.gamma = h.at("gamma").get<double>();
        b.hkvm.time_budget = h.at("time_budget").get<double>();
        b.hkvm.max_iters = h.at("max_iters").get<int>();
        b.hkvm.grad_tol = h.at("grad_tol").get<double>();
        if (doc.contains("keypoint_pairs"))
            for (const auto& p : doc.at("keypoint_pairs"))
                b.keypoint_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    } catch (const json::exception& e) {
        throw ParseError(std::string("bundle.hkvm: ") + e.what());
    }
    const json& range = require_field(doc, "human_range", "bundle");
    b.human_range_lo = vector_from_json(require_field(range, "lo", "bundle.human_range"), "human_range.lo");
    b.human_range_hi = vector_from_json(require_field(range, "hi", "bundle.human_range"), "human_range.hi");
    for (const auto& gp : require_field(doc, "residual_gps", "bundle")) b.residual.push_back(TrainedFingerGP::from_json(gp));
    if (doc.contains("direct_gps"))
        for (const auto& gp : doc.at("direct_gps")) b.direct.push_back(TrainedFingerGP::from_json(gp));
    return b;
}

CalibrationBundle load_bundle(const std::filesystem::path& path) {
    try {
        return bundle_from_json(read_json_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_bundle(const CalibrationBundle& bundle, const std::filesystem::path& path) {
    write_json_file(bundle_to_json(bundle), path);
}

void recorded_human_range(const CalibrationDataset& dataset, Eigen::VectorXd& lo, Eigen::VectorXd& hi) {
    if (dataset.samples.empty()) throw NoDataError("recorded_human_range: empty dataset");
    lo = dataset.samples.front().human;
    hi = lo;
    for (const auto& s : dataset.samples) {
        lo = lo.cwiseMin(s.human);
        hi = hi.cwiseMax(s.human);
    }
}

namespace {

// Distinct, reproducible seed per (finger, model kind).
std::uint64_t finger_seed(std::uint64_t base, int finger, bool direct) {
    return base * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(finger) * 2 + (direct ? 1 : 0);
}

struct FingerFit {
    TrainedFingerGP gp;
    FingerTrainingReport report;
};

FingerFit fit(const FingerTrainingSet& set, GpTrainOptions opts) {
    const auto t0 = std::chrono::steady_clock::now();
    GpTrainingLog log;
    FingerFit out{train_finger_gp(set.finger, set.inputs, set.targets, opts, &log), {}};
    out.report.finger = set.finger;
    out.report.samples = static_cast<int>(set.inputs.rows());
    out.report.initial_loss = log.initial_loss();
    out.report.final_loss = log.final_loss();
    out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (double v : log.loss) out.report.all_finite = out.report.all_finite && std::isfinite(v);
    return out;
}

}  // namespace

CalibrationBundle calibrate(const CalibrationDataset& dataset, const HkvmSolver& solver,
                            const CalibrationOptions& options, CalibrationReport* report) {
    const auto t0 = std::chrono::steady_clock::now();
    const HandModel& human = solver.human();
    const HandModel& robot = solver.robot();
    validate_dataset(dataset, human, robot);

    // Residual targets must not depend on machine speed, so the labels are solved to
    // convergence (or the iteration cap) without the wall-clock budget.
    const HkvmSolver cold = solver.unbudgeted();
    const std::vector<JointConfig> labels = hkvm_labels(dataset, cold);

    const int fingers = robot.finger_count();
    std::vector<std::future<FingerFit>> residual_jobs;
    std::vector<std::future<FingerFit>> direct_jobs;
    for (int f = 0; f < fingers; ++f) {
        GpTrainOptions opts = options.gp;
        opts.learn_constant_mean = false;
        opts.seed = finger_seed(options.gp.seed, f, false);
        residual_jobs.push_back(std::async(std::launch::async, [&, f, opts] {
            return fit(build_residual_targets(dataset, labels, human, robot, f), opts);
        }));
        if (options.train_direct) {
            GpTrainOptions dopts = options.gp;
            dopts.learn_constant_mean = true;
            dopts.seed = finger_seed(options.gp.seed, f, true);
            direct_jobs.push_back(std::async(std::launch::async, [&, f, dopts] {
                return fit(build_direct_targets(dataset, human, robot, f), dopts);
            }));
        }
    }

    CalibrationBundle bundle;
    bundle.human_model = ModelRef::of(human);
    bundle.robot_model = ModelRef::of(robot);
    bundle.hkvm = solver.params();
    // The bundle carries live-session settings; an unbounded budget is an offline choice.
    if (!std::isfinite(bundle.hkvm.time_budget)) bundle.hkvm.time_budget = HkvmParams{}.time_budget;
    for (const auto& p : solver.spec().pairs)
        bundle.keypoint_pairs.emplace_back(robot.keypoint_ids()[static_cast<std::size_t>(p.from)],
                                           robot.keypoint_ids()[static_cast<std::size_t>(p.to)]);
    recorded_human_range(dataset, bundle.human_range_lo, bundle.human_range_hi);

    CalibrationReport rep;
    for (auto& job : residual_jobs) {
        FingerFit r = job.get();
        bundle.residual.push_back(std::move(r.gp));
        rep.residual.push_back(r.report);
    }
    for (auto& job : direct_jobs) {
        FingerFit r = job.get();
        bundle.direct.push_back(std::move(r.gp));
        rep.direct.push_back(r.report);
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report) *report = rep;
    return bundle;
}

}  // namespace respilot
