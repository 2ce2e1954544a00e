#include <benchmark/benchmark.h>

#include <vector>

#include "evoqa/kernels.hpp"
#include "evoqa/rng.hpp"

using namespace evoqa;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
    RandomSource rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_buffer(std::size_t(n) * n, 1), b = random_buffer(std::size_t(n) * n, 2);
    std::vector<double> c(std::size_t(n) * n);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
        } else {
            kernels::serial::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
        }
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

// Estimator-sized convolution: 3x3, same padding, a batch of 8 maps.
kernels::ConvGeometry geometry(int size, int channels) { return {8, channels, size, size, channels, 3, 3, 1}; }

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
    const auto g = geometry(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    const auto x = random_buffer(std::size_t(g.batch) * g.in_channels * g.height * g.width, 3);
    const auto w = random_buffer(std::size_t(g.out_channels) * g.in_channels * 9, 4);
    std::vector<double> out(std::size_t(g.batch) * g.out_channels * g.out_height() * g.out_width());
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::conv2d_forward(g, x.data(), w.data(), out.data());
        } else {
            kernels::serial::conv2d_forward(g, x.data(), w.data(), out.data());
        }
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
    const auto g = geometry(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    const auto x = random_buffer(std::size_t(g.batch) * g.in_channels * g.height * g.width, 5);
    const auto w = random_buffer(std::size_t(g.out_channels) * g.in_channels * 9, 6);
    const auto dout = random_buffer(std::size_t(g.batch) * g.out_channels * g.out_height() * g.out_width(), 7);
    std::vector<double> dx(x.size()), dw(w.size());
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::conv2d_backward(g, x.data(), w.data(), dout.data(), dx.data(), dw.data());
        } else {
            kernels::serial::conv2d_backward(g, x.data(), w.data(), dout.data(), dx.data(), dw.data());
        }
        benchmark::DoNotOptimize(dx.data());
        benchmark::DoNotOptimize(dw.data());
    }
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Args({20, 8})->Args({50, 16});
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->Args({20, 8})->Args({50, 16});
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Args({20, 8})->Args({50, 16});
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial")->Args({20, 8})->Args({50, 16});

BENCHMARK_MAIN();
