#include <benchmark/benchmark.h>

#include "cst/harness.hpp"
#include "cst/numerics.hpp"

using namespace cst;

static void BM_GlobalGradient(benchmark::State& state) {
  harness::SimConfig cfg;
  cfg.m = state.range(0);
  const auto scene = harness::make_scene(cfg, 0);
  const Vec beta = scene.beta_star;
  for (auto _ : state) benchmark::DoNotOptimize(scene.cluster->global_gradient(beta));
}
BENCHMARK(BM_GlobalGradient)->Arg(1)->Arg(10)->Arg(20);

static void BM_TwoStageDesk(benchmark::State& state) {
  harness::SimConfig cfg;
  cfg.family = state.range(0) ? model::Family::logistic : model::Family::gaussian;
  int rep = 0;
  for (auto _ : state) {
    state.PauseTiming();
    auto scene = harness::make_scene(cfg, rep++);
    state.ResumeTiming();
    benchmark::DoNotOptimize(solver::run_two_stage(*scene.cluster, scene.hypothesis, cfg.penalty, cfg.stage));
  }
}
BENCHMARK(BM_TwoStageDesk)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(5);

static void BM_NoncentralSf(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(numerics::noncentral_chi2_sf(3.84, 3, 25.0));
}
BENCHMARK(BM_NoncentralSf);
BENCHMARK_MAIN();
