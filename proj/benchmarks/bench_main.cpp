#include <benchmark/benchmark.h>

#include "vgd/batch.hpp"
#include "vgd/edge_diffusion.hpp"
#include "vgd/metrics.hpp"
#include "vgd/nets.hpp"
#include "vgd/synth.hpp"
#include "vgd/tensor.hpp"

using namespace vgd;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = standard_normal(rng);
  return Tensor(std::move(shape), std::move(v));
}

std::vector<SpatialGraph> capillary(std::size_t count) {
  SynthConfig cfg = SynthConfig::defaults(SynthFamily::kCapillary);
  cfg.seed = 1;
  return generate_dataset(cfg, count);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

static void BM_NodeDenoiserForward(benchmark::State& state) {
  NodeDenoiser net({.width = 64, .blocks = 2, .heads = 4, .time_dim = 64}, 1);
  Rng rng(2);
  const Tensor x = random_tensor({16, 16, 3}, rng);
  const Tensor mask = Tensor::full({16, 16}, 1.0);
  const std::vector<std::size_t> t(16, 100);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict_noise(x, mask, t));
}
BENCHMARK(BM_NodeDenoiserForward);

static void BM_EdgeDenoiserForward(benchmark::State& state) {
  EdgeDenoiserConfig cfg;
  cfg.num_classes = 4;
  cfg.blocks = 4;
  cfg.heads = 4;
  cfg.node_dim = 64;
  cfg.edge_dim = 32;
  cfg.time_dim = 64;
  EdgeDenoiser net(cfg, 1);
  const auto graphs = capillary(16);
  const GraphBatch batch = make_graph_batch(graphs);
  const Tensor e = one_hot_edges(batch.edges, batch.batch_size(), batch.max_nodes, 4);
  const std::vector<std::size_t> t(batch.batch_size(), 100);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict_logits(e, batch.coords, batch.mask, t));
}
BENCHMARK(BM_EdgeDenoiserForward)->Unit(benchmark::kMillisecond);

static void BM_EvaluateSets(benchmark::State& state) {
  const auto a = capillary(200);
  SynthConfig cfg = SynthConfig::defaults(SynthFamily::kCapillary);
  cfg.seed = 2;
  const auto b = generate_dataset(cfg, 200);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_sets(a, b));
}
BENCHMARK(BM_EvaluateSets)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
