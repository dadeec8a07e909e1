#include <benchmark/benchmark.h>

#include "tristream/autodiff.hpp"
#include "tristream/model.hpp"
#include "tristream/ops.hpp"

using namespace tristream;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv1dCausal(benchmark::State& state) {
  Rng rng(1);
  const auto T = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({32, T}, rng);
  const Conv1dKernel k{random_tensor({32, 32, 3}, rng), random_tensor({32}, rng), 2};
  for (auto _ : state) benchmark::DoNotOptimize(conv1d_causal(x, k));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(T));
}
BENCHMARK(BM_Conv1dCausal)->Arg(500)->Arg(2000);

void BM_DepthwiseConv(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = random_tensor({64, 500}, rng);
  const Tensor k = random_tensor({64, 3}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(depthwise_conv1d(x, k, 1));
}
BENCHMARK(BM_DepthwiseConv);

void BM_LstmScanForwardBackward(benchmark::State& state) {
  Rng rng(3);
  const std::size_t H = 32;
  const Tensor x = random_tensor({32, 500}, rng);
  const Tensor wi = random_tensor({4 * H, 32}, rng), wh = random_tensor({4 * H, H}, rng);
  const Tensor b = random_tensor({4 * H}, rng);
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var y = ad::lstm_scan(g.constant(x), g.parameter("wi", wi), g.parameter("wh", wh), g.parameter("b", b));
    benchmark::DoNotOptimize(g.backward(ad::sum(y)));
  }
}
BENCHMARK(BM_LstmScanForwardBackward)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  Rng rng(4);
  ModelConfig c;
  c.num_classes = 6;
  const ParamStore p = build(c, {}, rng);
  const Tensor batch = random_tensor({static_cast<std::size_t>(state.range(0)), c.channels, c.window}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, c, {}, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
