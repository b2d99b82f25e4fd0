// Parallel production kernels against the serial reference implementations.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "lupi/data.hpp"
#include "lupi/model.hpp"
#include "lupi/train.hpp"
#include "lupi/vbp.hpp"
#include "oracle/oracle.hpp"
#include "support/test_support.hpp"

using namespace lupi;

namespace {

struct ConvCase {
  Tensor x;
  nn::ConvParams p;
};

ConvCase conv_case(std::size_t channels, std::size_t size) {
  lupi::testing::TestRng rng(7);
  return {rng.tensor({channels, size, size}), lupi::testing::random_conv(rng, channels, channels, 3, 1, 1)};
}

void BM_ConvParallel(benchmark::State& state) {
  const auto c = conv_case(state.range(0), state.range(1));
  omp_set_num_threads(static_cast<int>(state.range(2)));
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_forward(c.x, c.p));
  omp_set_num_threads(omp_get_num_procs());
}

void BM_ConvSerialReference(benchmark::State& state) {
  const auto c = conv_case(state.range(0), state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(oracle::naive_conv2d(c.x, c.p));
}

void BM_VbpForward(benchmark::State& state) {
  lupi::testing::TestRng rng(11);
  const auto trace = lupi::testing::random_trace(rng, 4, 16);
  for (auto _ : state) benchmark::DoNotOptimize(vbp::vbp_forward(trace));
}

void BM_VbpPosthocReference(benchmark::State& state) {
  lupi::testing::TestRng rng(11);
  const auto trace = lupi::testing::random_trace(rng, 4, 16);
  for (auto _ : state) benchmark::DoNotOptimize(oracle::posthoc_vbp(trace));
}

// One epoch over 256 samples; the per-sample gradients run in parallel.
void BM_TrainEpoch(benchmark::State& state) {
  data::DatasetConfig d;
  d.num_samples = 320;
  d.image_size = 16;
  const auto tr = data::generate_split(d, data::Split::train);
  const auto regime = static_cast<train::Regime>(state.range(0));
  const auto spec = train::make_spec(
      model::parse_layers("conv 6 3 1 1; relu; conv 8 3 2 1; relu; resblock 3; gap; linear 3; sigmoid"), tr.front(),
      regime);
  train::TrainConfig cfg;
  cfg.regime = regime;
  cfg.epochs = 1;
  omp_set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(train::train(spec, tr, {}, cfg));
  omp_set_num_threads(omp_get_num_procs());
  state.SetLabel(std::string(train::to_string(regime)));
}

void conv_args(benchmark::internal::Benchmark* b) {
  for (int threads : {1, 2, 4})
    for (auto [c, s] : {std::pair{4, 16}, std::pair{16, 32}, std::pair{32, 64}}) b->Args({c, s, threads});
}

}  // namespace

BENCHMARK(BM_ConvParallel)->Apply(conv_args)->ArgNames({"channels", "size", "threads"})->UseRealTime();
BENCHMARK(BM_ConvSerialReference)
    ->Args({4, 16})
    ->Args({16, 32})
    ->Args({32, 64})
    ->ArgNames({"channels", "size"});
BENCHMARK(BM_VbpForward);
BENCHMARK(BM_VbpPosthocReference);
BENCHMARK(BM_TrainEpoch)
    ->ArgsProduct({{static_cast<int>(train::Regime::regular), static_cast<int>(train::Regime::half_focus)}, {1, 2, 4}})
    ->ArgNames({"regime", "threads"})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

BENCHMARK_MAIN();
