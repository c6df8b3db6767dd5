// Serial vs OpenMP gemm throughput over square and decoder-shaped problems.
#include <benchmark/benchmark.h>

#include <vector>

#include "sager/kernels.hpp"
#include "sager/rng.hpp"

namespace {

using Gemm = void (*)(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);

void run(benchmark::State& state, Gemm gemm) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  sager::CounterRng rng(1);
  std::vector<float> a(m * k), b(k * n), c(m * n);
  for (auto& x : a) x = static_cast<float>(rng.uniform(-1, 1));
  for (auto& x : b) x = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : state) {
    gemm(m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * k));
}

void serial_nn(benchmark::State& s) { run(s, sager::kernels::serial::gemm_nn<float>); }
void omp_nn(benchmark::State& s) { run(s, sager::kernels::omp::gemm_nn<float>); }
void serial_nt(benchmark::State& s) { run(s, sager::kernels::serial::gemm_nt<float>); }
void omp_nt(benchmark::State& s) { run(s, sager::kernels::omp::gemm_nt<float>); }

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 64, 64})->Args({256, 256, 256})->Args({512, 512, 512})->Args({40, 256, 64});
}

}  // namespace

BENCHMARK(serial_nn)->Apply(shapes);
BENCHMARK(omp_nn)->Apply(shapes);
BENCHMARK(serial_nt)->Apply(shapes);
BENCHMARK(omp_nt)->Apply(shapes);

BENCHMARK_MAIN();
