// Serial reference vs OpenMP step on the real-time scene: 20x20 sheet,
// 1000 springs, 20 substeps per 30 Hz frame. Reports simulated frames/s.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <algorithm>

#include "springtwin/dynamics.hpp"
#include "springtwin/kernels.hpp"
#include "springtwin/topology.hpp"

using namespace springtwin;

namespace {

SpringMassModel sheet(ExecutionPolicy policy, std::size_t side, std::size_t max_springs) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j)
      pts.push_back({0.01 * i, 0.01 * j, 0.05 + 0.0001 * ((i * 7 + j * 3) % 5)});
  PhysParams p;
  p.k_hom = 500.0;
  p.node_mass = 0.02;
  p.substeps = 20;
  SpringTopology topo = build_springs(pts, 0.015, 8, p.k_hom);
  topo.springs.resize(std::min(topo.springs.size(), max_springs));
  return SpringMassModel(topo, {}, p, 0.0, policy);
}

SystemState settled(const SpringMassModel& m, std::size_t side) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j)
      pts.push_back({0.01 * i, 0.01 * j, 0.05 + 0.0001 * ((i * 7 + j * 3) % 5)});
  SystemState s = SystemState::at_rest(pts);
  StepWorkspace ws;
  for (int i = 0; i < 30; ++i) s = step(m, s, {}, {}, ws);
  return s;
}

void run_frames(benchmark::State& st, ExecutionPolicy policy) {
  const auto side = static_cast<std::size_t>(st.range(0));
  const int threads = static_cast<int>(st.range(1));
  const int saved = omp_get_max_threads();
  if (threads > 0) omp_set_num_threads(threads);  // 0: all cores
  const SpringMassModel m = sheet(policy, side, side == 20 ? 1000 : ~std::size_t{0});
  SystemState s = settled(m, side);
  StepWorkspace ws;
  for (auto _ : st) {
    s = step(m, s, {}, {}, ws);
    benchmark::DoNotOptimize(s.positions.data());
  }
  st.counters["frames/s"] = benchmark::Counter(static_cast<double>(st.iterations()), benchmark::Counter::kIsRate);
  st.counters["springs"] = static_cast<double>(m.stiffness().size());
  omp_set_num_threads(saved);
}

void BM_StepSerial(benchmark::State& st) { run_frames(st, ExecutionPolicy::serial_reference); }
void BM_StepParallel(benchmark::State& st) { run_frames(st, ExecutionPolicy::parallel); }

void BM_ForcesSerial(benchmark::State& st) {
  const auto side = static_cast<std::size_t>(st.range(0));
  const SpringMassModel m = sheet(ExecutionPolicy::serial_reference, side, ~std::size_t{0});
  const SystemState s = settled(m, side);
  std::vector<Vec3> f(s.size());
  for (auto _ : st) {
    kernels::serial::accumulate_forces(m, s.positions, s.velocities, {}, f);
    benchmark::DoNotOptimize(f.data());
  }
}

void BM_ForcesParallel(benchmark::State& st) {
  const auto side = static_cast<std::size_t>(st.range(0));
  const SpringMassModel m = sheet(ExecutionPolicy::parallel, side, ~std::size_t{0});
  const SystemState s = settled(m, side);
  StepWorkspace ws;
  for (auto _ : st) {
    accumulate_forces(m, s, {}, ws);
    benchmark::DoNotOptimize(ws.forces.data());
  }
}

}  // namespace

// {sheet side, OpenMP threads}; side 20 is the 1000-spring real-time scene.
BENCHMARK(BM_StepSerial)->Args({20, 1})->Args({60, 1})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_StepParallel)->Args({20, 1})->Args({20, 0})->Args({60, 0})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ForcesSerial)->Arg(20)->Arg(60)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ForcesParallel)->Arg(20)->Arg(60)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
