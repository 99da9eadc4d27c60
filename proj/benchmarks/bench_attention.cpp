// Wall-time microbenchmarks: Lorentz primitives, banded vs dense temporal
// attention, and a full desk-scale forward pass.

#include <benchmark/benchmark.h>

#include <random>

#include "lpose/network.hpp"
#include "lpose/synth.hpp"

using namespace lpose;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor<double> uniform(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::uniform(std::move(shape), lo, hi, rng);
}

void BM_ExpLogRoundtrip(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> v(d), p(d + 1), back(d);
  for (auto& e : v) e = u(rng);
  for (auto _ : state) {
    lorentz::exp_origin<double>(v, p);
    lorentz::log_origin<double>(p, back);
    benchmark::DoNotOptimize(back.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ExpLogRoundtrip)->Arg(16)->Arg(64)->Arg(512);

void BM_PairwiseSqdist(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), d = 64;
  auto a = uniform({static_cast<int>(n), 64}, 11);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    lorentz::pairwise_sqdist_expanded<double>(a.data, n, a.data, n, d, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * d));
}
BENCHMARK(BM_PairwiseSqdist)->Arg(17)->Arg(64);

void BM_TemporalBanded(benchmark::State& state) {
  const int t_n = static_cast<int>(state.range(0));
  const int window = static_cast<int>(state.range(1));
  const int dh = 16;
  auto q = uniform({1, t_n, dh}, 13);
  Tensor<double> mask = ad::band_mask<double>(t_n, window);
  for (auto _ : state) {
    Tape<double> tape;
    auto x = tape.constant(q);
    auto alpha = ad::softmax_last(ad::band_qk(x, x, window), &mask);
    auto out = ad::band_av(alpha, x, window);
    benchmark::DoNotOptimize(out.val().data.data());
  }
}
BENCHMARK(BM_TemporalBanded)->Args({27, 13})->Args({81, 13})->Args({243, 3})->Args({243, 13})->Args({243, 27});

void BM_TemporalDense(benchmark::State& state) {
  const int t_n = static_cast<int>(state.range(0));
  const int dh = 16;
  auto q = uniform({t_n, dh}, 17);
  for (auto _ : state) {
    Tape<double> tape;
    auto x = tape.constant(q);
    auto out = ad::matmul(ad::softmax_last(ad::matmul(x, x, false, true)), x);
    benchmark::DoNotOptimize(out.val().data.data());
  }
}
BENCHMARK(BM_TemporalDense)->Arg(27)->Arg(81)->Arg(243);

void BM_DeskForward(benchmark::State& state) {
  auto skeleton = Skeleton::preset17();
  ModelConfig cfg = ModelConfig::desk();
  cfg.dropout = 0.0;
  Model<double> model(cfg, skeleton, 1);
  SyntheticSpec spec;
  spec.sequences = 1;
  spec.frames = 27;
  spec.seed = 19;
  auto data = Dataset::from_sequences(synthesize(spec, skeleton));
  auto input = data.sequences[0].inputs.cast<double>();
  for (auto _ : state) {
    auto pred = model.predict(input);
    benchmark::DoNotOptimize(pred.data.data());
  }
}
BENCHMARK(BM_DeskForward);

}  // namespace

BENCHMARK_MAIN();
