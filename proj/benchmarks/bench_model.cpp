#include <benchmark/benchmark.h>

#include "mixlab/contrast.hpp"
#include "mixlab/model.hpp"
#include "mixlab/synthgen.hpp"
#include "mixlab/train.hpp"

using namespace mixlab;

namespace {

LabeledImage scene(int side) { return generate_scene(3, default_source_spec(5), side, side, 5); }

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto params = init_params<float>(1, ArchSpec{});
  const auto s = scene(side);
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, s.pixels));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128);

static void BM_ForwardBackward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto params = init_params<float>(1, ArchSpec{});
  auto grads = params.zeros_like();
  const auto s = scene(side);
  for (auto _ : state) {
    const auto pass = forward(params, s.pixels);
    Tensor3<float> d(pass.logits.channels, pass.logits.height, pass.logits.width);
    for (auto& v : d.v) v = 1e-3f;
    backward<float>(params, pass, &d, nullptr, grads);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(64);

static void BM_PixelContrast(benchmark::State& state) {
  const auto params = init_params<float>(1, ArchSpec{});
  const auto s = scene(64);
  const auto f1 = encode(params, s.pixels).features();
  std::vector<int> positions;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) positions.push_back(i);
  auto grads = params.zeros_like();
  for (auto _ : state) {
    benchmark::DoNotOptimize(pixel_contrastive_loss(f1, f1, params, 20.0, positions, &grads, true));
  }
}
BENCHMARK(BM_PixelContrast)->Arg(16)->Arg(64);

static void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.max_iters = 1 << 30;
  BenchmarkShape shape;
  shape.n_source = shape.n_target = 4;
  shape.n_target_eval = shape.n_source_eval = 1;
  const auto data = make_benchmark(7, default_source_spec(5), default_target_spec(5), shape);
  auto st = init_train_state<float>(cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step(st, {&data.source[0]}, {&data.target[0].pixels}, cfg));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
