// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "s2v/kernels.hpp"

namespace k = s2v::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, double lo, double hi, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

k::Conv2dGeometry conv_geometry(std::size_t side) {
  k::Conv2dGeometry g;
  g.in_channels = 32;
  g.out_channels = 32;
  g.height = side;
  g.width = side;
  g.kernel_h = 3;
  g.kernel_w = 3;
  g.pad_h = 1;
  g.pad_w = 1;
  return g;
}

template <bool Parallel>
void BM_Conv2d(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
  const auto x = random_vec(g.in_channels * g.height * g.width, -1, 1, 1);
  const auto w = random_vec(g.out_channels * g.in_channels * 9, -1, 1, 2);
  std::vector<double> y(g.out_channels * g.out_height() * g.out_width());
  for (auto _ : state) {
    if constexpr (Parallel) k::par::conv2d_forward(g, x, w, y);
    else k::ref::conv2d_forward(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, -1, 1, 3), b = random_vec(n * n, -1, 1, 4);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::par::gemm(false, false, n, n, n, a, b, c, false);
    else k::ref::gemm(false, false, n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
}

enum class Scan { kRef, kPar, kChunked };

template <Scan Variant>
void BM_Scan(benchmark::State& state) {
  const k::ScanDims dims{16, 8, static_cast<std::size_t>(state.range(0))};
  const auto E = dims.channels, S = dims.state, L = dims.length;
  const auto u = random_vec(E * L, -0.5, 0.5, 5), delta = random_vec(E * L, 1e-3, 0.1, 6);
  const auto a = random_vec(E * S, -4.5, -0.5, 7);
  const auto b = random_vec(S * L, -0.5, 0.5, 8), c = random_vec(S * L, -0.5, 0.5, 9);
  const std::vector<double> d(E, 1.0);
  const k::ScanInputs in{u, delta, a, b, c, d};
  std::vector<double> y(E * L);
  for (auto _ : state) {
    if constexpr (Variant == Scan::kRef) k::ref::selective_scan(dims, in, y, {});
    else if constexpr (Variant == Scan::kPar) k::par::selective_scan(dims, in, y, {});
    else k::par::selective_scan_chunked(dims, in, y, {}, 64);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(E * L));
}

}  // namespace

BENCHMARK(BM_Conv2d<false>)->Name("conv2d/ref")->Arg(16)->Arg(32);
BENCHMARK(BM_Conv2d<true>)->Name("conv2d/par")->Arg(16)->Arg(32);
BENCHMARK(BM_Gemm<false>)->Name("gemm/ref")->Arg(64)->Arg(128);
BENCHMARK(BM_Gemm<true>)->Name("gemm/par")->Arg(64)->Arg(128);
BENCHMARK(BM_Scan<Scan::kRef>)->Name("scan/ref")->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_Scan<Scan::kPar>)->Name("scan/par")->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_Scan<Scan::kChunked>)->Name("scan/par_chunked")->Arg(256)->Arg(1024)->Arg(4096);

BENCHMARK_MAIN();
