// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <string>

#include <benchmark/benchmark.h>

#include "einlin/einsum_kernel.hpp"
#include "einlin/moe.hpp"
#include "einlin/mu_scaling.hpp"
#include "einlin/structure_space.hpp"
#include "einlin/teacher.hpp"

namespace einlin {
namespace {

Matrix gaussian(std::size_t rows, std::size_t cols) {
  std::mt19937_64 rng(0);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = n(rng);
  return m;
}

// range(0): preset index, range(1): width.
const char* const kPresets[] = {"dense", "low-rank", "kronecker", "tt", "monarch", "btt"};

void BM_Mvm(benchmark::State& state) {
  const auto d = state.range(1);
  const EinsumSpec s = instantiate_spec(parse_theta(kPresets[state.range(0)]), d, d);
  const EinsumLayer l = init_layer(s, init_plan(s), 0);
  const Matrix x = gaussian(128, static_cast<std::size_t>(d));
  for (auto _ : state) benchmark::DoNotOptimize(mvm(l, x));
  state.SetLabel(kPresets[state.range(0)]);
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(count_flops(s) * 128),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Mvm)->ArgsProduct({{0, 1, 2, 3, 4, 5}, {256, 1024}});

void BM_Vjp(benchmark::State& state) {
  const auto d = state.range(1);
  const EinsumSpec s = instantiate_spec(parse_theta(kPresets[state.range(0)]), d, d);
  const EinsumLayer l = init_layer(s, init_plan(s), 0);
  const Matrix x = gaussian(128, static_cast<std::size_t>(d));
  const Matrix up = gaussian(128, static_cast<std::size_t>(d));
  for (auto _ : state) benchmark::DoNotOptimize(vjp(l, x, up));
  state.SetLabel(kPresets[state.range(0)]);
}
BENCHMARK(BM_Vjp)->ArgsProduct({{0, 4, 5}, {256, 1024}});

void BM_MoeForward(benchmark::State& state) {
  MoeConfig c;
  c.num_experts = static_cast<int>(state.range(0));
  const MoELayer l = init_moe(256, c, 1e-3, 64, 0);
  const Matrix x = gaussian(128, 256);
  for (auto _ : state) benchmark::DoNotOptimize(moe_forward(l, x));
}
BENCHMARK(BM_MoeForward)->Arg(4)->Arg(8)->Arg(16);

void BM_TeacherBatch(benchmark::State& state) {
  const Teacher t(TeacherConfig{});
  std::uint64_t counter = 0;
  for (auto _ : state) benchmark::DoNotOptimize(gen_batch(t, state.range(0), 0, counter++));
}
BENCHMARK(BM_TeacherBatch)->Arg(128)->Arg(1024);

}  // namespace
}  // namespace einlin

BENCHMARK_MAIN();
