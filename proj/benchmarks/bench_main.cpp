#include <benchmark/benchmark.h>

#include <random>

#include "hmc/diff.hpp"
#include "hmc/listmode.hpp"
#include "hmc/network.hpp"
#include "hmc/pci.hpp"
#include "hmc/siddon.hpp"

using namespace hmc;

namespace {

std::vector<ListmodeEvent> random_lors(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phi(0, 2 * M_PI), z(-120, 120);
  const double r = ScannerGeometry{}.radius;
  std::vector<ListmodeEvent> ev(n);
  for (auto& e : ev) {
    const double a = phi(rng), b = phi(rng);
    e.p1 = Vec3(r * std::cos(a), r * std::sin(a), z(rng));
    e.p2 = Vec3(r * std::cos(b), r * std::sin(b), z(rng));
  }
  return ev;
}

void BM_SiddonTrace(benchmark::State& state) {
  const GridSpec g = default_pci_source_grid();
  const auto ev = random_lors(1024, 1);
  double acc = 0;
  for (auto _ : state) {
    for (const auto& e : ev) trace_segment(g, e.p1, e.p2, [&](std::size_t, double w) { acc += w; });
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ev.size()));
}
BENCHMARK(BM_SiddonTrace);

void BM_Backproject(benchmark::State& state) {
  const GridSpec g = default_pci_source_grid();
  const auto ev = random_lors(static_cast<std::size_t>(state.range(0)), 2);
  ImageVolume acc(g, 0.0);
  for (auto _ : state) {
    backproject(ev, acc);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Backproject)->Arg(10'000)->Arg(50'000)->Unit(benchmark::kMillisecond);

void BM_Conv3d(benchmark::State& state) {
  // first encoder layer of the default model at batch 1
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  const int c_out = static_cast<int>(state.range(0));
  std::vector<double> xv(32 * 32 * 32), wv(static_cast<std::size_t>(c_out) * 125);
  for (auto& v : xv) v = u(rng);
  for (auto& v : wv) v = u(rng);
  const nn::Tensor x = nn::Tensor::from({1, 1, 32, 32, 32}, xv, true);
  const nn::Tensor w = nn::Tensor::from({c_out, 1, 5, 5, 5}, wv, true);
  for (auto _ : state) {
    nn::Tensor y = nn::conv3d(x, w, nn::Tensor{}, 2, 2);
    nn::backward(nn::mean(y));
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_Conv3d)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> av(static_cast<std::size_t>(n) * n), bv(av.size());
  for (auto& v : av) v = u(rng);
  for (auto& v : bv) v = u(rng);
  const nn::Tensor a = nn::Tensor::from({n, n}, av), b = nn::Tensor::from({n, n}, bv);
  for (auto _ : state) {
    nn::Tensor c = nn::matmul(a, b);
    benchmark::DoNotOptimize(c.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(n) * n * n);
}
BENCHMARK(BM_Gemm)->Arg(16)->Arg(64)->Arg(256);

void BM_TrainStep(benchmark::State& state) {
  nn::ModelConfig cfg;
  cfg.seed = 1;
  nn::MotionNet net(cfg);
  const int batch = static_cast<int>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> rv(static_cast<std::size_t>(batch) * 32 * 32 * 32), mv(rv.size());
  for (auto& v : rv) v = u(rng);
  for (auto& v : mv) v = u(rng);
  const nn::Tensor ref = nn::Tensor::from({batch, 1, 32, 32, 32}, rv), mov = nn::Tensor::from({batch, 1, 32, 32, 32}, mv);
  const nn::Tensor target = nn::Tensor::zeros({batch, 6});
  for (auto _ : state) {
    net.zero_grad();
    nn::backward(nn::mse_loss(net.forward(ref, mov), target));
  }
}
BENCHMARK(BM_TrainStep)->Arg(12)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
