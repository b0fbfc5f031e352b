// Serial reference vs OpenMP kernels, plus the TGV term and a full
// training step. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>

#include "tgvunet/kernels.hpp"
#include "tgvunet/network.hpp"
#include "tgvunet/ops.hpp"
#include "tgvunet/training.hpp"

using namespace tgvunet;

static Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(s);
  for (double& v : t.data()) v = u(gen);
  return t;
}

template <bool Parallel>
static void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({4, c, 64, 64}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c, 1, 1, 1}, 3);
  for (auto _ : state) {
    Tensor y = Parallel ? kernels::parallel::conv2d_forward(x, w, b, 1) : kernels::serial::conv2d_forward(x, w, b, 1);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_Conv2dForward<false>)->Arg(8)->Arg(16);
BENCHMARK(BM_Conv2dForward<true>)->Arg(8)->Arg(16);

template <bool Parallel>
static void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({4, c, 64, 64}, 1), w = random_tensor({c, c, 3, 3}, 2), g = random_tensor({4, c, 64, 64}, 4);
  for (auto _ : state) {
    auto r = Parallel ? kernels::parallel::conv2d_backward(x, w, g, 1) : kernels::serial::conv2d_backward(x, w, g, 1);
    benchmark::DoNotOptimize(r.weight.data().data());
  }
}
BENCHMARK(BM_Conv2dBackward<false>)->Arg(8);
BENCHMARK(BM_Conv2dBackward<true>)->Arg(8);

template <bool Parallel>
static void BM_TransposeConv(benchmark::State& state) {
  const Tensor x = random_tensor({4, 16, 32, 32}, 1), w = random_tensor({16, 8, 3, 3}, 2);
  for (auto _ : state) {
    Tensor y = Parallel ? kernels::parallel::conv_transpose2d_forward(x, w, 2)
                        : kernels::serial::conv_transpose2d_forward(x, w, 2);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_TransposeConv<false>);
BENCHMARK(BM_TransposeConv<true>);

template <bool Parallel>
static void BM_Bilinear(benchmark::State& state) {
  const Tensor x = random_tensor({4, 16, 32, 32}, 1);
  for (auto _ : state) {
    Tensor y = Parallel ? kernels::parallel::bilinear_upsample2x(x) : kernels::serial::bilinear_upsample2x(x);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_Bilinear<false>);
BENCHMARK(BM_Bilinear<true>);

static void BM_TgvEnergyGrad(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor v = random_tensor({1, 1, n, n}, 5);
  const TGVSettings s;
  for (auto _ : state) {
    auto r = tgv2_energy_grad(v.data(), n, n, 1.0, 1.0, s);
    benchmark::DoNotOptimize(r.energy);
  }
}
BENCHMARK(BM_TgvEnergyGrad)->Arg(16)->Arg(64);

static void BM_TrainStep(benchmark::State& state) {
  UNetPPConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 4;
  cfg.upsample_mode = state.range(0) ? UpsampleMode::bilinear_tgv : UpsampleMode::transpose_conv;
  Network net(cfg);
  const Tensor x = random_tensor({4, 1, 32, 32}, 6);
  Tensor y({4, 1, 32, 32});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0 ? 1.0 : 0.0;
  auto params = net.parameters();
  for (auto _ : state) {
    zero_grads(params);
    Tape t;
    const ForwardOutput out = net.forward(t, t.constant(x), Mode::train, 1);
    const Var loss = ops::add(t, ops::bce_loss(t, out.prob, y), net.regularizer(t, out));
    t.backward(loss);
    adam_step(params, 1e-3);
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
