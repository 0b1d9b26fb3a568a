#include "respilot/bundle.hpp"
#include "respilot/calibration.hpp"
#include "respilot/io.hpp"
#include "respilot/pipeline.hpp"
#include "respilot/trajectory.hpp"
#include "respilot/workspace.hpp"

#include <benchmark/benchmark.h>

#include <limits>
#include <string>

using namespace respilot;

namespace {

std::string data(const std::string& file) { return std::string(RESPILOT_BENCH_DATA_DIR) + "/" + file; }

// Models, sweep and a calibrated context, built once.
struct Fixture {
    HandModel human = load_model(data("human_proxy.json"));
    HandModel robot = load_model(data("robot_allegro_like.json"));
    Trajectory sweep = load_trajectory(data("synthetic/sweep.json"));
    std::shared_ptr<const RetargetContext> context;

    Fixture() {
        HkvmParams p;
        p.time_budget = std::numeric_limits<double>::infinity();
        const HkvmSolver solver(human, robot, KeypointVectorSpec::default_for(robot), p);
        const DatasetLoad load = load_dataset(data("synthetic/calibration.json"), human, robot);
        context = std::make_shared<const RetargetContext>(human, robot, calibrate(load.dataset, solver, {}));
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

void BM_HkvmWarmSolve(benchmark::State& state) {
    const Fixture& f = fixture();
    const HkvmSolver solver(f.context->human(), f.context->robot(), f.context->spec(), HkvmParams{});
    WarmStart warm;
    std::size_t t = 0;
    for (auto _ : state) {
        const HkvmSolution s = solver.solve(f.sweep.configs[t++ % f.sweep.size()], warm);
        warm.last_solution = s.q;
        benchmark::DoNotOptimize(s.q.data());
    }
}
BENCHMARK(BM_HkvmWarmSolve)->Unit(benchmark::kMicrosecond);

void BM_HkvmColdSolve(benchmark::State& state) {
    const Fixture& f = fixture();
    const HkvmSolver solver(f.context->human(), f.context->robot(), f.context->spec(), HkvmParams{});
    std::size_t t = 0;
    for (auto _ : state) benchmark::DoNotOptimize(solver.solve(f.sweep.configs[(t += 97) % f.sweep.size()], {}).q.data());
}
BENCHMARK(BM_HkvmColdSolve)->Unit(benchmark::kMicrosecond);

void BM_ResidualPosterior(benchmark::State& state) {
    const Fixture& f = fixture();
    const JointConfig q_h = f.sweep.configs[f.sweep.size() / 2];
    const JointConfig q_o = 0.5 * (f.robot.lower() + f.robot.upper());
    for (auto _ : state)
        benchmark::DoNotOptimize(apply_residual(f.human, f.robot, q_h, q_o, f.context->bundle()->residual).q_d.data());
}
BENCHMARK(BM_ResidualPosterior)->Unit(benchmark::kMicrosecond);

void BM_PipelineTick(benchmark::State& state) {
    const Fixture& f = fixture();
    SessionConfig cfg;
    cfg.kind = static_cast<RetargeterKind>(state.range(0));
    RetargetSession session(f.context, cfg);
    if (state.range(1)) session.set_constraint(1, true);
    std::size_t t = 0;
    for (auto _ : state) benchmark::DoNotOptimize(session.step(f.sweep.configs[t++ % f.sweep.size()]).q_target.data());
    state.SetLabel(std::string(to_string(cfg.kind)) + (state.range(1) ? " + index pinch" : ""));
}
BENCHMARK(BM_PipelineTick)
    ->Args({static_cast<int>(RetargeterKind::joint), 0})
    ->Args({static_cast<int>(RetargeterKind::ik), 0})
    ->Args({static_cast<int>(RetargeterKind::hkvm), 0})
    ->Args({static_cast<int>(RetargeterKind::gp_direct), 0})
    ->Args({static_cast<int>(RetargeterKind::res_gp), 0})
    ->Args({static_cast<int>(RetargeterKind::res_gp), 1})
    ->Unit(benchmark::kMicrosecond);

void BM_FingertipVoxels(benchmark::State& state) {
    const Fixture& f = fixture();
    std::vector<JointConfig> robot_configs;
    RetargetSession session(f.context, SessionConfig{});
    for (const auto& q : f.sweep.configs) robot_configs.push_back(session.step(q).q_c);
    for (auto _ : state) benchmark::DoNotOptimize(fingertip_workspace(robot_configs, f.robot).total);
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(robot_configs.size()));
}
BENCHMARK(BM_FingertipVoxels)->Unit(benchmark::kMillisecond);

void BM_TrainFingerGp(benchmark::State& state) {
    const Fixture& f = fixture();
    const HkvmSolver solver(f.human, f.robot, f.context->spec(), HkvmParams{});
    const DatasetLoad load = load_dataset(data("synthetic/calibration.json"), f.human, f.robot);
    const FingerTrainingSet set = build_residual_targets(load.dataset, solver, 1);
    GpTrainOptions opts;
    opts.epochs = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(train_finger_gp(1, set.inputs, set.targets, opts).samples());
}
BENCHMARK(BM_TrainFingerGp)->Arg(3000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
