// Serial reference kernels against their OpenMP versions. The two produce
// bitwise-equal results (see test_kernels), so only time is compared here.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "ecgd/dwt.hpp"
#include "ecgd/kernels.hpp"
#include "ecgd/rng.hpp"
#include "ecgd/trainer.hpp"

namespace {

using namespace ecgd;

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

std::vector<Segment> random_segments(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Segment> out(n);
  for (auto& s : out) {
    for (float& v : s.data) v = static_cast<float>(rng.normal());
  }
  return out;
}

// Attention-sized products: [L x d] . [d x L] for the first stage.
template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  kernels::GemmArgs g;
  g.m = static_cast<std::size_t>(state.range(0));
  g.n = static_cast<std::size_t>(state.range(1));
  g.k = static_cast<std::size_t>(state.range(2));
  g.trans_b = kernels::Trans::yes;
  const auto a = random_vec(g.m * g.k, 1);
  const auto b = random_vec(g.k * g.n, 2);
  std::vector<float> c(g.m * g.n);
  g.a = a.data();
  g.b = b.data();
  g.c = c.data();
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gemm(g);
    else kernels::serial::gemm(g);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.m * g.n * g.k));
}
BENCHMARK_TEMPLATE(BM_gemm, false)->Args({256, 256, 4})->Args({256, 32, 8})->Args({64, 64, 64});
BENCHMARK_TEMPLATE(BM_gemm, true)->Args({256, 256, 4})->Args({256, 32, 8})->Args({64, 64, 64});

template <bool Parallel>
void BM_conv1d(benchmark::State& state) {
  const kernels::Conv1dShape s{8, 2, 256, static_cast<std::size_t>(state.range(0))};
  const auto x = random_vec(s.c_in * s.len, 3);
  const auto w = random_vec(s.c_out * s.c_in * s.kernel, 4);
  const auto b = random_vec(s.c_out, 5);
  std::vector<float> y(s.c_out * s.len);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv1d_forward(s, x.data(), w.data(), b.data(), y.data());
    else kernels::serial::conv1d_forward(s, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK_TEMPLATE(BM_conv1d, false)->Arg(3)->Arg(9);
BENCHMARK_TEMPLATE(BM_conv1d, true)->Arg(3)->Arg(9);

template <bool Parallel>
void BM_dwt_denoise_all(benchmark::State& state) {
  const auto segs = random_segments(static_cast<std::size_t>(state.range(0)), 6);
  for (auto _ : state) {
    auto out = Parallel ? dwt::denoise_all(segs) : dwt::serial::denoise_all(segs);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_TEMPLATE(BM_dwt_denoise_all, false)->Arg(256);
BENCHMARK_TEMPLATE(BM_dwt_denoise_all, true)->Arg(256);

template <bool Parallel>
void BM_model_denoise(benchmark::State& state) {
  const net::Model model(net::ModelConfig{}, 7);
  const auto segs = random_segments(static_cast<std::size_t>(state.range(0)), 8);
  for (auto _ : state) {
    auto out = Parallel ? train::denoise(model, segs) : train::serial::denoise(model, segs);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_TEMPLATE(BM_model_denoise, false)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_model_denoise, true)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
