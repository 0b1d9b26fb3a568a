// respilot: calibration, batch retargeting, workspace reports, fixtures and the live service.

#include "respilot/bundle.hpp"
#include "respilot/calibration.hpp"
#include "respilot/errors.hpp"
#include "respilot/io.hpp"
#include "respilot/pipeline.hpp"
#include "respilot/service.hpp"
#include "respilot/workspace.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#ifndef RESPILOT_DEFAULT_DATA_DIR
#define RESPILOT_DEFAULT_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace respilot;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Options {
    std::string human_model = std::string(RESPILOT_DEFAULT_DATA_DIR) + "/human_proxy.json";
    std::string robot_model = std::string(RESPILOT_DEFAULT_DATA_DIR) + "/robot_allegro_like.json";
    std::string dataset;
    std::string bundle;
    std::string trajectory;
    std::string out;
    std::string format = "table";
    std::vector<std::string> retargeters;
    std::vector<std::string> constrain;
    std::optional<double> beta;
    std::optional<double> gamma;
    double time_budget = 0.0;
    double smoothing = 0.01;
    double distance = 0.01;
    double delta_joint = 0.05;
    double delta_tip = 0.005;
    double lr = 0.01;
    int epochs = 3000;
    std::uint64_t seed = 0;
    bool no_direct = false;
    bool timings = false;
    std::string warp = "expansion";
    double gain = 0.6;
    int steps = 20;
    std::string host = "127.0.0.1";
    int port = 8765;
};

void print_error(std::string_view category, std::string_view type, std::string_view message) {
    std::cerr << json{{"error", category}, {"type", type}, {"message", message}}.dump() << '\n';
}

void require_file(const std::string& path, std::string_view flag) {
    if (path.empty()) throw InvalidInput(std::string(flag) + " is required");
    if (!fs::is_regular_file(path)) throw InvalidInput(std::string(flag) + ": no such file '" + path + "'");
}

struct Models {
    HandModel human;
    HandModel robot;
};

Models load_models(const Options& o) {
    require_file(o.human_model, "--human-model");
    require_file(o.robot_model, "--robot-model");
    Models m{load_model(o.human_model), load_model(o.robot_model)};
    validate_hand_layout(m.human);
    validate_hand_layout(m.robot);
    return m;
}

std::shared_ptr<const RetargetContext> load_context(const Options& o) {
    Models m = load_models(o);
    std::optional<CalibrationBundle> bundle;
    if (!o.bundle.empty()) {
        require_file(o.bundle, "--bundle");
        bundle = load_bundle(o.bundle);
    }
    auto ctx = std::make_shared<const RetargetContext>(std::move(m.human), std::move(m.robot), std::move(bundle));
    for (const auto& w : ctx->warnings()) spdlog::warn("{}", w);
    return ctx;
}

// Batch commands default to no wall-clock budget so their output depends only on the inputs.
double budget_or_unbounded(double seconds) {
    return seconds > 0.0 ? seconds : std::numeric_limits<double>::infinity();
}

SessionConfig session_config(const Options& o, const RetargetContext& ctx, bool batch) {
    SessionConfig c;
    c.hkvm = ctx.default_hkvm();
    if (o.beta) c.hkvm.beta = *o.beta;
    if (o.gamma) c.hkvm.gamma = *o.gamma;
    c.smoothing = o.smoothing;
    c.distance = o.distance;
    if (batch) {
        c.hkvm.time_budget = budget_or_unbounded(o.time_budget);
        c.constraint.time_budget = o.time_budget > 0.0 ? o.time_budget : 0.0;
    } else if (o.time_budget > 0.0) {
        c.hkvm.time_budget = o.time_budget;
    }
    c.validate();
    return c;
}

void write_text(const std::string& text, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
    if (!out) throw Error("write failed for '" + path + "'");
}

// --- synth -----------------------------------------------------------------------------------

int cmd_synth(const Options& o) {
    if (o.out.empty()) throw InvalidInput("--out <directory> is required");
    if (o.steps < 2) throw InvalidInput("--steps must be >= 2");
    Models m = load_models(o);
    HkvmParams params;
    if (o.beta) params.beta = *o.beta;
    if (o.gamma) params.gamma = *o.gamma;
    params.time_budget = std::numeric_limits<double>::infinity();  // labels must not depend on timing
    params.validate();
    const HkvmSolver solver(m.human, m.robot, KeypointVectorSpec::default_for(m.robot), params);
    CalibrationWarp warp;
    if (o.warp == "expansion")
        warp = expansion_warp(solver, o.gain);
    else if (o.warp == "hkvm")
        warp = hkvm_warp(solver);
    else
        throw InvalidInput("--warp must be 'expansion' or 'hkvm'");

    const CalibrationDataset ds = generate_synthetic_calibration(o.seed, m.human, m.robot, warp);
    const Trajectory sweep = generate_sweep_trajectory(o.seed, ds, m.human, o.steps);
    fs::create_directories(o.out);
    const fs::path ds_path = fs::path(o.out) / "calibration.json";
    const fs::path traj_path = fs::path(o.out) / "sweep.json";
    save_dataset(ds, m.human, ds_path);
    save_trajectory(sweep, traj_path);

    auto file_hash = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return fnv1a_hex(ss.str());
    };
    json doc{{"seed", o.seed},
             {"warp", o.warp},
             {"files",
              {{{"path", ds_path.string()}, {"samples", ds.samples.size()}, {"fnv1a", file_hash(ds_path)}},
               {{"path", traj_path.string()}, {"ticks", sweep.size()}, {"fnv1a", file_hash(traj_path)}}}}};
    if (o.format == "json") {
        std::cout << doc.dump(2) << '\n';
    } else {
        for (const auto& f : doc["files"])
            std::printf("%-40s %s\n", f["path"].get<std::string>().c_str(), f["fnv1a"].get<std::string>().c_str());
    }
    return 0;
}

// --- calibrate -------------------------------------------------------------------------------

int cmd_calibrate(const Options& o) {
    require_file(o.dataset, "--dataset");
    if (o.out.empty()) throw InvalidInput("--out <bundle.json> is required");
    if (!(o.lr > 0.0)) throw InvalidInput("--lr must be > 0");
    if (o.epochs < 1) throw InvalidInput("--epochs must be >= 1");
    Models m = load_models(o);
    DatasetLoad load = load_dataset(o.dataset, m.human, m.robot);
    for (const auto& w : load.warnings) spdlog::warn("{}", w);

    HkvmParams params;
    if (o.beta) params.beta = *o.beta;
    if (o.gamma) params.gamma = *o.gamma;
    params.time_budget = std::numeric_limits<double>::infinity();  // labels must not depend on timing
    params.validate();
    const HkvmSolver solver(m.human, m.robot, KeypointVectorSpec::default_for(m.robot), params);
    CalibrationOptions copts;
    copts.gp.lr = o.lr;
    copts.gp.epochs = o.epochs;
    copts.gp.seed = o.seed;
    copts.train_direct = !o.no_direct;
    CalibrationReport report;
    const CalibrationBundle bundle = calibrate(load.dataset, solver, copts, &report);
    save_bundle(bundle, o.out);

    auto rows = [&](const std::vector<FingerTrainingReport>& reps, std::string_view kind) {
        json out = json::array();
        for (const auto& r : reps)
            out.push_back({{"model", kind},
                           {"finger", m.robot.fingers()[static_cast<std::size_t>(r.finger)].name},
                           {"samples", r.samples},
                           {"initial_loss", r.initial_loss},
                           {"final_loss", r.final_loss},
                           {"seconds", r.seconds},
                           {"finite", r.all_finite}});
        return out;
    };
    json fingers = rows(report.residual, "residual");
    for (auto& r : rows(report.direct, "direct")) fingers.push_back(r);
    if (o.format == "json") {
        std::cout << json{{"bundle", o.out}, {"bundle_id", bundle.id()}, {"seconds", report.seconds}, {"fingers", fingers}}
                         .dump(2)
                  << '\n';
    } else {
        std::printf("%-9s %-8s %7s %14s %14s %8s\n", "model", "finger", "samples", "initial -mll", "final -mll",
                    "time s");
        for (const auto& r : fingers)
            std::printf("%-9s %-8s %7d %14.4f %14.4f %8.3f\n", r["model"].get<std::string>().c_str(),
                        r["finger"].get<std::string>().c_str(), r["samples"].get<int>(),
                        r["initial_loss"].get<double>(), r["final_loss"].get<double>(), r["seconds"].get<double>());
        std::printf("wall time %.3f s, bundle %s (%s)\n", report.seconds, o.out.c_str(), bundle.id().c_str());
    }
    return 0;
}

// --- retarget --------------------------------------------------------------------------------

json finger_list(const HandModel& model, const std::vector<int>& fingers) {
    json out = json::array();
    for (int f : fingers) out.push_back(model.fingers()[static_cast<std::size_t>(f)].name);
    return out;
}

int cmd_retarget(const Options& o) {
    require_file(o.trajectory, "--trajectory");
    if (o.retargeters.size() > 1) throw InvalidInput("retarget takes a single --retargeter");
    auto ctx = load_context(o);
    SessionConfig cfg = session_config(o, *ctx, true);
    cfg.kind = parse_retargeter_kind(o.retargeters.empty() ? "hkvm" : o.retargeters.front());
    const Trajectory traj = load_trajectory(o.trajectory);
    traj.validate();
    for (const auto& q : traj.configs) ctx->human().check_config(q, "trajectory config");

    RetargetSession session(ctx, cfg);
    for (const auto& name : o.constrain) session.set_constraint(ctx->robot().finger_index(name), true);

    Trajectory out_traj;
    out_traj.model = ctx->robot().name();
    out_traj.timestamps = traj.timestamps;
    json ticks = json::array();
    StageTimings sum, worst;
    double late_violation = 0.0;  // worst over the last 50 ticks
    const std::size_t settle_from = traj.size() > 50 ? traj.size() - 50 : 0;
    for (std::size_t t = 0; t < traj.size(); ++t) {
        const RetargetResult r = session.step(traj.configs[t]);
        out_traj.configs.push_back(r.q_target);
        json tick{{"q_base", vector_to_json(r.q_base)},
                  {"q_d", vector_to_json(r.q_d)},
                  {"q_c", vector_to_json(r.q_c)},
                  {"q_target", vector_to_json(r.q_target)}};
        json flags = json::object();
        if (r.base_status) flags["solver_status"] = to_string(*r.base_status);
        if (!r.degenerate_fingers.empty()) flags["degenerate_fingers"] = finger_list(ctx->robot(), r.degenerate_fingers);
        if (!r.unreachable_fingers.empty())
            flags["unreachable_fingers"] = finger_list(ctx->robot(), r.unreachable_fingers);
        if (!r.zero_width_joints.empty()) flags["zero_width_joints"] = r.zero_width_joints;
        if (!r.constraints.empty()) {
            json cs = json::array();
            for (const auto& c : r.constraints) {
                cs.push_back({{"finger", ctx->robot().fingers()[static_cast<std::size_t>(c.finger)].name},
                              {"distance", c.distance},
                              {"violation", c.violation}});
                if (t >= settle_from) late_violation = std::max(late_violation, c.violation);
            }
            flags["constraints"] = cs;
            flags["constraints_feasible"] = r.constraints_feasible;
        }
        tick["flags"] = flags;
        if (o.timings)
            tick["timings_s"] = {{"base", r.timings.base},
                                 {"residual", r.timings.residual},
                                 {"reconstruct", r.timings.reconstruct},
                                 {"constraint", r.timings.constraint},
                                 {"smoothing", r.timings.smoothing},
                                 {"total", r.timings.total}};
        ticks.push_back(std::move(tick));
        auto acc = [](double& s, double& w, double v) {
            s += v;
            w = std::max(w, v);
        };
        acc(sum.base, worst.base, r.timings.base);
        acc(sum.residual, worst.residual, r.timings.residual);
        acc(sum.constraint, worst.constraint, r.timings.constraint);
        acc(sum.total, worst.total, r.timings.total);
    }

    if (!o.out.empty()) {
        json doc = trajectory_to_json(out_traj);
        doc["retargeter"] = to_string(cfg.kind);
        doc["source"] = o.trajectory;
        doc["ticks"] = std::move(ticks);
        write_json_file(doc, o.out);
    }
    const double n = static_cast<double>(traj.size());
    json summary{{"retargeter", to_string(cfg.kind)},
                 {"ticks", traj.size()},
                 {"constraints", o.constrain},
                 {"max_violation_last_50", late_violation},
                 {"mean_total_s", sum.total / n},
                 {"max_total_s", worst.total},
                 {"mean_base_s", sum.base / n},
                 {"mean_residual_s", sum.residual / n},
                 {"mean_constraint_s", sum.constraint / n}};
    if (o.format == "json") {
        std::cout << summary.dump(2) << '\n';
    } else {
        std::printf("retargeter %s, %zu ticks\n", std::string(to_string(cfg.kind)).c_str(), traj.size());
        std::printf("tick time  mean %.3f ms  max %.3f ms (means: base %.3f, residual %.3f, constraint %.3f ms)\n",
                    1e3 * sum.total / n, 1e3 * worst.total, 1e3 * sum.base / n, 1e3 * sum.residual / n,
                    1e3 * sum.constraint / n);
        if (!o.constrain.empty()) std::printf("max constraint violation over the last 50 ticks: %.2e m\n", late_violation);
        if (!o.out.empty()) std::printf("wrote %s\n", o.out.c_str());
    }
    return 0;
}

// --- workspace -------------------------------------------------------------------------------

int cmd_workspace(const Options& o) {
    require_file(o.trajectory, "--trajectory");
    if (!(o.delta_joint > 0.0) || !(o.delta_tip > 0.0)) throw InvalidInput("voxel sizes must be > 0");
    auto ctx = load_context(o);
    const SessionConfig cfg = session_config(o, *ctx, true);
    std::vector<RetargeterKind> kinds;
    if (o.retargeters.empty()) {
        for (RetargeterKind k : all_retargeter_kinds()) {
            if (!needs_bundle(k)) {
                kinds.push_back(k);
            } else if (const auto* b = ctx->bundle(); b && (k != RetargeterKind::gp_direct || b->has_direct())) {
                kinds.push_back(k);
            }
        }
    } else {
        for (const auto& name : o.retargeters) kinds.push_back(parse_retargeter_kind(name));
    }
    const Trajectory traj = load_trajectory(o.trajectory);
    traj.validate();
    for (const auto& q : traj.configs) ctx->human().check_config(q, "trajectory config");
    const WorkspaceReport report = compare_retargeters(ctx, traj, kinds, cfg, o.delta_joint, o.delta_tip);
    write_text(o.format == "json" ? report_to_json(report).dump(2) + "\n" : report_to_table(report), o.out);
    return 0;
}

// --- serve -----------------------------------------------------------------------------------

int cmd_serve(const Options& o) {
    if (o.port < 0 || o.port > 65535) throw InvalidInput("--port must be in [0, 65535]");
    auto ctx = load_context(o);
    ServerConfig sc;
    sc.host = o.host;
    sc.port = static_cast<std::uint16_t>(o.port);
    sc.session = session_config(o, *ctx, false);
    if (!o.retargeters.empty()) sc.session.kind = parse_retargeter_kind(o.retargeters.front());
    else if (ctx->bundle()) sc.session.kind = RetargeterKind::res_gp;

    // Handle SIGINT/SIGTERM synchronously: block them before any thread starts.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Server server(ctx, sc);
    const std::uint16_t port = server.start();
    std::cout << json{{"listening", o.host + ":" + std::to_string(port)}, {"port", port}}.dump() << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {} received, shutting down", sig);
    server.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("respilot"));
    spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");
    spdlog::set_level(spdlog::level::info);
    if (const char* lvl = std::getenv("RESPILOT_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));

    Options o;
    CLI::App app{"Residual-GP hand retargeting toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a TOML/INI file; a [retarget] section sets retarget options");

    auto models = [&](CLI::App* c) {
        c->add_option("--human-model", o.human_model, "Human hand model JSON")->capture_default_str();
        c->add_option("--robot-model", o.robot_model, "Robot hand model JSON")->capture_default_str();
    };
    auto hkvm_flags = [&](CLI::App* c) {
        c->add_option("--beta", o.beta, "Human-to-robot scale")->check(CLI::PositiveNumber);
        c->add_option("--gamma", o.gamma, "Pull toward the open hand")->check(CLI::NonNegativeNumber);
    };
    auto format = [&](CLI::App* c) {
        c->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"table", "json"}))->capture_default_str();
    };
    auto pipeline_flags = [&](CLI::App* c) {
        c->add_option("--bundle", o.bundle, "Calibration bundle (needed for res_gp and gp_direct)");
        c->add_option("--smoothing", o.smoothing, "Filter coefficient lambda in (0, 1]")->capture_default_str();
        c->add_option("--distance", o.distance, "Thumb-to-fingertip constraint distance, m")->capture_default_str();
        c->add_option("--time-budget", o.time_budget, "Per-tick HKVM and constraint budget, s (0: unbounded)")
            ->capture_default_str();
        hkvm_flags(c);
    };

    CLI::App* synth = app.add_subcommand("synth", "Write a synthetic calibration set and a sweep trajectory");
    models(synth);
    hkvm_flags(synth);
    format(synth);
    synth->add_option("--seed", o.seed, "Generator seed")->capture_default_str();
    synth->add_option("--out", o.out, "Output directory")->required();
    synth->add_option("--warp", o.warp, "Labelling map: expansion or hkvm (null residual)")->capture_default_str();
    synth->add_option("--gain", o.gain, "Expansion warp gain")->capture_default_str();
    synth->add_option("--steps", o.steps, "Ticks per blend segment of the sweep")->capture_default_str();

    CLI::App* calib = app.add_subcommand("calibrate", "Train the per-finger residual GPs");
    models(calib);
    hkvm_flags(calib);
    format(calib);
    calib->add_option("--dataset", o.dataset, "Calibration dataset JSON")->required();
    calib->add_option("--out", o.out, "Bundle output path")->required();
    calib->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    calib->add_option("--epochs", o.epochs, "Adam epochs")->capture_default_str();
    calib->add_option("--seed", o.seed, "Initialisation seed")->capture_default_str();
    calib->add_flag("--no-direct", o.no_direct, "Skip the direct-GP baseline models");

    CLI::App* retarget = app.add_subcommand("retarget", "Retarget a human trajectory file");
    models(retarget);
    pipeline_flags(retarget);
    format(retarget);
    retarget->add_option("--trajectory", o.trajectory, "Human trajectory JSON")->required();
    retarget->add_option("--retargeter", o.retargeters, "joint, ik, hkvm, gp_direct or res_gp");
    retarget->add_option("--constrain", o.constrain, "Hold thumb-to-<finger> distance (repeatable)");
    retarget->add_option("--out", o.out, "Robot trajectory output JSON");
    retarget->add_flag("--timings", o.timings, "Include per-stage timings for every tick");

    CLI::App* ws = app.add_subcommand("workspace", "Compare retargeter workspaces on a trajectory");
    models(ws);
    pipeline_flags(ws);
    format(ws);
    ws->add_option("--trajectory", o.trajectory, "Human trajectory JSON")->required();
    ws->add_option("--retargeter", o.retargeters, "Retargeters to compare (repeatable; default: all available)");
    ws->add_option("--delta-joint", o.delta_joint, "Joint voxel size, rad")->capture_default_str();
    ws->add_option("--delta-tip", o.delta_tip, "Fingertip voxel size, m")->capture_default_str();
    ws->add_option("--out", o.out, "Report output path (default stdout)");

    CLI::App* serve = app.add_subcommand("serve", "Run the streaming retargeting service");
    models(serve);
    pipeline_flags(serve);
    serve->add_option("--host", o.host, "Bind address")->capture_default_str();
    serve->add_option("--port", o.port, "Port (0 picks a free one)")->capture_default_str();
    serve->add_option("--retargeter", o.retargeters, "Default retargeter for new sessions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("validation", "usage", e.what());
        return kExitValidation;
    }

    try {
        if (*synth) return cmd_synth(o);
        if (*calib) return cmd_calibrate(o);
        if (*retarget) return cmd_retarget(o);
        if (*ws) return cmd_workspace(o);
        if (*serve) return cmd_serve(o);
    } catch (const InvalidInput& e) {
        print_error("validation", "InvalidInput", e.what());
        return kExitValidation;
    } catch (const ValidationError& e) {
        print_error("validation", "ValidationError", e.what());
        return kExitValidation;
    } catch (const ParseError& e) {
        print_error("validation", "ParseError", e.what());
        return kExitValidation;
    } catch (const NoDataError& e) {
        print_error("validation", "NoDataError", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        print_error("runtime", "Error", e.what());
        return kExitRuntime;
    }
    return kExitRuntime;
}
