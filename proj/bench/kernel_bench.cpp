// Optimized kernels against their serial reference versions.
#include <benchmark/benchmark.h>

#include <vector>

#include "dfu/kernels.hpp"
#include "dfu/rng.hpp"

using namespace dfu;

namespace {

std::vector<double> randv(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

kernels::ConvDims conv_dims(const benchmark::State& st) {
  const auto c = static_cast<std::size_t>(st.range(0));
  const auto r = static_cast<std::size_t>(st.range(1));
  return {c, c, 8, r, r, 3};
}

void BM_conv_fast(benchmark::State& st) {
  auto d = conv_dims(st);
  auto x = randv(d.cin * d.pixels(), 1), w = randv(d.cout * d.cin * 9, 2);
  std::vector<double> y(d.cout * d.pixels());
  for (auto _ : st) {
    kernels::conv2d_forward(x.data(), w.data(), y.data(), d);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(d.cout * d.cin * 9 * d.pixels()));
}

void BM_conv_ref(benchmark::State& st) {
  auto d = conv_dims(st);
  auto x = randv(d.cin * d.pixels(), 1), w = randv(d.cout * d.cin * 9, 2);
  std::vector<double> y(d.cout * d.pixels());
  for (auto _ : st) {
    kernels::reference::conv2d_forward(x.data(), w.data(), y.data(), d);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(d.cout * d.cin * 9 * d.pixels()));
}

void BM_conv_backward_fast(benchmark::State& st) {
  auto d = conv_dims(st);
  auto x = randv(d.cin * d.pixels(), 1), w = randv(d.cout * d.cin * 9, 2), dy = randv(d.cout * d.pixels(), 3);
  std::vector<double> dx(x.size()), dw(w.size());
  for (auto _ : st) {
    kernels::conv2d_backward(x.data(), w.data(), dy.data(), dx.data(), dw.data(), d);
    benchmark::DoNotOptimize(dx.data());
  }
}

void BM_conv_backward_ref(benchmark::State& st) {
  auto d = conv_dims(st);
  auto x = randv(d.cin * d.pixels(), 1), w = randv(d.cout * d.cin * 9, 2), dy = randv(d.cout * d.pixels(), 3);
  std::vector<double> dx(x.size()), dw(w.size());
  for (auto _ : st) {
    kernels::reference::conv2d_backward(x.data(), w.data(), dy.data(), dx.data(), dw.data(), d);
    benchmark::DoNotOptimize(dx.data());
  }
}

kernels::SpectralDims spec_dims(const benchmark::State& st) {
  const auto c = static_cast<std::size_t>(st.range(0));
  return {c, c, 8, static_cast<std::size_t>(st.range(1)), 7};
}

void BM_spectral_fast(benchmark::State& st) {
  auto d = spec_dims(st);
  const std::size_t plane = d.r * (d.r / 2 + 1);
  std::vector<cplx> X(d.cin * d.batch * plane, cplx(1.0, 0.5)), Y(d.cout * d.batch * plane);
  auto K = randv(d.cout * d.cin * d.modes() * 2, 4);
  for (auto _ : st) {
    kernels::spectral_mul_forward(X.data(), K.data(), Y.data(), d);
    benchmark::DoNotOptimize(Y.data());
  }
}

void BM_spectral_ref(benchmark::State& st) {
  auto d = spec_dims(st);
  const std::size_t plane = d.r * (d.r / 2 + 1);
  std::vector<cplx> X(d.cin * d.batch * plane, cplx(1.0, 0.5)), Y(d.cout * d.batch * plane);
  auto K = randv(d.cout * d.cin * d.modes() * 2, 4);
  for (auto _ : st) {
    kernels::reference::spectral_mul_forward(X.data(), K.data(), Y.data(), d);
    benchmark::DoNotOptimize(Y.data());
  }
}

void BM_group_norm_fast(benchmark::State& st) {
  const auto c = static_cast<std::size_t>(st.range(0)), r = static_cast<std::size_t>(st.range(1));
  auto x = randv(c * 8 * r * r, 5);
  std::vector<double> y(x.size()), mean(8 * 8), rstd(8 * 8);
  for (auto _ : st) {
    kernels::group_norm_forward(x.data(), y.data(), mean.data(), rstd.data(), c, 8, r * r, 8, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_group_norm_ref(benchmark::State& st) {
  const auto c = static_cast<std::size_t>(st.range(0)), r = static_cast<std::size_t>(st.range(1));
  auto x = randv(c * 8 * r * r, 5);
  std::vector<double> y(x.size()), mean(8 * 8), rstd(8 * 8);
  for (auto _ : st) {
    kernels::reference::group_norm_forward(x.data(), y.data(), mean.data(), rstd.data(), c, 8, r * r, 8, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_conv_fast)->Args({16, 32})->Args({32, 16})->Args({32, 48});
BENCHMARK(BM_conv_ref)->Args({16, 32})->Args({32, 16})->Args({32, 48});
BENCHMARK(BM_conv_backward_fast)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_conv_backward_ref)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_spectral_fast)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_spectral_ref)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_group_norm_fast)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_group_norm_ref)->Args({16, 32})->Args({32, 16});

BENCHMARK_MAIN();
