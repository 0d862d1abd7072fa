#include <benchmark/benchmark.h>

#include <vector>

#include "cakt/batch.hpp"
#include "cakt/conv3d.hpp"
#include "cakt/data.hpp"
#include "cakt/metrics.hpp"
#include "cakt/model.hpp"
#include "cakt/rng.hpp"
#include "cakt/training.hpp"

namespace {

using namespace cakt;

// args: k, H (= W), batch
void BM_ConvForward(benchmark::State& state) {
  const VolumeShape shape{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                          static_cast<std::size_t>(state.range(1))};
  const auto batch = static_cast<std::size_t>(state.range(2));
  ParameterSet params;
  Conv3d conv(params, "conv", "conv", 4, 8, KernelShape{}, shape);
  Rng rng(1);
  conv.init(rng);
  Volume in(4, shape.voxels(), batch);
  for (auto& x : in.data()) x = rng.normal();
  Volume out;
  for (auto _ : state) {
    conv.forward(in, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_ConvForward)->Args({6, 17, 32})->Args({3, 4, 32})->Unit(benchmark::kMicrosecond);

void BM_ConvBackward(benchmark::State& state) {
  const VolumeShape shape{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                          static_cast<std::size_t>(state.range(1))};
  const auto batch = static_cast<std::size_t>(state.range(2));
  ParameterSet params;
  Conv3d conv(params, "conv", "conv", 4, 8, KernelShape{}, shape);
  Rng rng(2);
  conv.init(rng);
  Volume in(4, shape.voxels(), batch);
  Volume grad_out(8, shape.voxels(), batch);
  for (auto& x : in.data()) x = rng.normal();
  for (auto& x : grad_out.data()) x = rng.normal();
  Volume grad_in;
  for (auto _ : state) {
    conv.backward(in, grad_out, &grad_in);
    benchmark::DoNotOptimize(grad_in.data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_ConvBackward)->Args({6, 17, 32})->Args({3, 4, 32})->Unit(benchmark::kMicrosecond);

// args: k, H (= W); 32 sequences of length 50 over 20 concepts.
void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.num_concepts = 20;
  cfg.k = static_cast<int>(state.range(0));
  cfg.height = cfg.width = static_cast<int>(state.range(1));
  Model model(cfg);
  const auto ds = generate_synthetic(32, 20, 50, 3);
  const auto batch = make_batch(ds.sequences);
  for (auto _ : state) {
    auto pred = model.forward(batch, ForwardOptions{});
    benchmark::DoNotOptimize(pred.probabilities.data());
  }
}
BENCHMARK(BM_ModelForward)->Args({3, 4})->Args({6, 17})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.num_concepts = 20;
  cfg.k = static_cast<int>(state.range(0));
  cfg.height = cfg.width = static_cast<int>(state.range(1));
  Model model(cfg);
  const auto ds = generate_synthetic(32, 20, 50, 4);
  const auto batch = make_batch(ds.sequences);
  ForwardOptions options;
  options.mode = Mode::kTrain;
  options.keep_tape = true;
  for (auto _ : state) {
    model.parameters().zero_grad();
    const auto pred = model.forward(batch, options);
    model.backward(loss_gradient(pred));
  }
}
BENCHMARK(BM_TrainStep)->Args({3, 4})->Args({6, 17})->Unit(benchmark::kMillisecond);

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    labels[i] = rng.bernoulli(0.6) ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(scores, labels));
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auc)->RangeMultiplier(10)->Range(1000, 1000000)->Complexity(benchmark::oNLogN);

}  // namespace

BENCHMARK_MAIN();
