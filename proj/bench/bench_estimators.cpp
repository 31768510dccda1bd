#include <benchmark/benchmark.h>

#include "flychain/bench.hpp"

namespace {

using namespace flychain;

RunConfig small_config(int trials) {
  RunConfig c;
  c.trials = trials;
  c.world.duration = 0.2;
  return c;
}

void BM_MonteCarloSerial(benchmark::State& state) {
  const RunConfig c = small_config(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_monte_carlo_serial(c));
}
BENCHMARK(BM_MonteCarloSerial)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_MonteCarloParallel(benchmark::State& state) {
  RunConfig c = small_config(static_cast<int>(state.range(0)));
  c.workers = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_monte_carlo(c));
}
BENCHMARK(BM_MonteCarloParallel)->Arg(4)->Unit(benchmark::kMillisecond);

struct StepFixture {
  ChainParameters params = ChainParameters::two_link_acrobat();
  std::vector<TruthRecord> truth;
  std::vector<SensorSample> sensors;
  EstimatorConfig config;

  StepFixture() {
    WorldConfig world;
    world.duration = 0.2;
    truth = simulate_truth(params, TrajectorySpec::back_somersault(), world);
    Rng rng = make_rng(world.seed, 0, Stream::kSensorNoise);
    sensors = sample_stream(params, truth, world.noise, rng);
  }
};

void BM_EstimatorStep(benchmark::State& state) {
  static const StepFixture fx;
  const auto kind = kAllEstimatorKinds[static_cast<std::size_t>(state.range(0))];
  state.SetLabel(std::string(to_string(kind)));
  auto estimator = make_estimator(kind, fx.params, fx.config, InitialState::from(fx.truth[0]));
  std::size_t k = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimator->step(fx.truth[k - 1].tau, fx.truth[k].tau, fx.sensors[k]));
    if (++k == fx.sensors.size()) {
      state.PauseTiming();
      estimator = make_estimator(kind, fx.params, fx.config, InitialState::from(fx.truth[0]));
      k = 1;
      state.ResumeTiming();
    }
  }
}
BENCHMARK(BM_EstimatorStep)->DenseRange(0, 4)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
