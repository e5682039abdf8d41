#include <benchmark/benchmark.h>

#include <numeric>

#include "mmpfn/backbone.hpp"
#include "mmpfn/imbalance.hpp"
#include "mmpfn/model.hpp"
#include "mmpfn/optim.hpp"
#include "mmpfn/projector.hpp"
#include "mmpfn/rng.hpp"
#include "mmpfn/synthetic_prior.hpp"
#include "mmpfn/tasks.hpp"

using namespace mmpfn;

namespace {

Tensor noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.normal();
  return Tensor(shape, std::move(v));
}

BackboneConfig bench_backbone() {
  BackboneConfig cfg;
  cfg.model_dim = 32;
  cfg.heads = 4;
  cfg.blocks = 3;
  return cfg;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = noise({n, n}, 1), b = noise({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

static void BM_Attention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Tensor q = noise({8, len, 32}, 3);
  const BoolMatrix mask = build_incontext_mask(len / 2, len - len / 2);
  for (auto _ : state) benchmark::DoNotOptimize(scaled_dot_attention(q, q, q, 4, &mask));
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(128);

static void BM_BackboneForward(benchmark::State& state) {
  const auto samples = static_cast<std::size_t>(state.range(0));
  const BackboneParams params = BackboneParams::create(bench_backbone(), 0);
  const Tensor table = noise({samples, 6, 32}, 4);
  std::vector<std::size_t> labels(samples * 3 / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(backbone_logits(table, labels, 2, params));
}
BENCHMARK(BM_BackboneForward)->Arg(64)->Arg(192)->Unit(benchmark::kMillisecond);

static void BM_PretrainStep(benchmark::State& state) {
  BackboneParams params = BackboneParams::create(bench_backbone(), 0);
  const TabularEncoderParams encoder = TabularEncoderParams::create(32, 32, 1);
  PretrainConfig cfg;
  cfg.n_tasks = 1;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    cfg.seed = seed++;
    benchmark::DoNotOptimize(pretrain_backbone(PriorConfig{}, params, encoder, cfg));
  }
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

static void BM_MgmCapProjector(benchmark::State& state) {
  ProjectorVariant v;
  v.heads = static_cast<std::size_t>(state.range(0));
  v.cap = true;
  v.pooled = 8;
  const ModalityProjector proj = ModalityProjector::create(v.normalized(), 64, 32, 0);
  const Tensor cls = noise({192, 64}, 5);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(proj.forward(cls));
}
BENCHMARK(BM_MgmCapProjector)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_FineTuneStep(benchmark::State& state) {
  TaskSpec ts;
  const MultimodalDataset data = make_task(ts);
  ModelSpec spec;
  spec.backbone = bench_backbone();
  ProjectorVariant v;
  v.heads = 8;
  spec.modalities.push_back({"image", ts.embed_dim, v.normalized()});
  FineTuneConfig cfg;
  cfg.steps = 1;
  for (auto _ : state) {
    MultimodalModel model = MultimodalModel::create(spec, 0);
    benchmark::DoNotOptimize(fine_tune(model, data, cfg, 0));
  }
}
BENCHMARK(BM_FineTuneStep)->Unit(benchmark::kMillisecond);

static void BM_MonteCarloAttention(benchmark::State& state) {
  ImbalanceSpec spec;
  spec.n_nontabular = 20;
  spec.n_tabular = 5;
  spec.samples = 10000;
  for (auto _ : state) benchmark::DoNotOptimize(monte_carlo_attention_mass(spec));
}
BENCHMARK(BM_MonteCarloAttention)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
