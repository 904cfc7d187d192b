#include <benchmark/benchmark.h>

#include "pgcu/backbone.hpp"
#include "pgcu/metrics.hpp"
#include "pgcu/ops.hpp"
#include "pgcu/pgcu.hpp"
#include "pgcu/training.hpp"

using namespace pgcu;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

// Desk-scale model: C=4, 16x16 LRMS, 64x64 PAN.
BackboneConfig desk_model(UpsamplerKind kind) {
  BackboneConfig cfg;
  cfg.num_res_blocks = 2;
  cfg.width = 16;
  cfg.upsampler.kind = kind;
  cfg.upsampler.channels = 4;
  cfg.upsampler.scale = 4;
  cfg.upsampler.espcnn_hidden = 16;
  cfg.upsampler.pgcu.pan_ds_blocks = 2;
  cfg.upsampler.pgcu.ms_ds_blocks = 1;
  cfg.upsampler.pgcu.feat_dim = 16;
  cfg.upsampler.pgcu.hidden_channels = 16;
  return cfg;
}

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({c, 64, 64}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  const auto b = random_tensor({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 64 * 64 * c * c * 9);
}
BENCHMARK(BM_Conv2d)->Arg(4)->Arg(16)->Arg(32);

void BM_PgcuForward(benchmark::State& state) {
  auto cfg = desk_model(UpsamplerKind::kPgcu).upsampler.pgcu;
  cfg.channels = 4;
  cfg.scale = 4;
  cfg.feat_dim = static_cast<std::size_t>(state.range(0));
  const auto params = init_pgcu_params<float>(cfg, 0);
  const auto lrms = random_tensor({4, 16, 16}, 1);
  const auto pan = random_tensor({64, 64}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(pgcu_forward(lrms, pan, params, cfg));
}
BENCHMARK(BM_PgcuForward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_PgcuBackward(benchmark::State& state) {
  auto cfg = desk_model(UpsamplerKind::kPgcu).upsampler.pgcu;
  cfg.channels = 4;
  cfg.scale = 4;
  const auto params = init_pgcu_params<float>(cfg, 0);
  const auto lrms = random_tensor({4, 16, 16}, 1);
  const auto pan = random_tensor({64, 64}, 2);
  const auto up = random_tensor({4, 64, 64}, 3);
  const auto trace = pgcu_forward_traced(lrms, pan, params, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(pgcu_backward(trace, params, cfg, up));
}
BENCHMARK(BM_PgcuBackward)->Unit(benchmark::kMillisecond);

// One forward + backward of the full model per iteration.
void BM_BackboneStep(benchmark::State& state) {
  const auto cfg = desk_model(static_cast<UpsamplerKind>(state.range(0)));
  const auto params = init_backbone_params<float>(cfg, 0);
  const auto lrms = random_tensor({4, 16, 16}, 1);
  const auto pan = random_tensor({64, 64}, 2);
  const auto target = random_tensor({4, 64, 64}, 3);
  for (auto _ : state) {
    const auto trace = backbone_forward_traced(lrms, pan, params, cfg);
    const auto loss = compute_loss(trace.output, target, LossKind::kL2);
    benchmark::DoNotOptimize(backbone_backward(trace, params, cfg, loss.grad));
  }
  state.SetLabel(std::string(upsampler_name(cfg.upsampler.kind)));
}
BENCHMARK(BM_BackboneStep)
    ->Arg(static_cast<int>(UpsamplerKind::kBicubic))
    ->Arg(static_cast<int>(UpsamplerKind::kTconv))
    ->Arg(static_cast<int>(UpsamplerKind::kEspcnn))
    ->Arg(static_cast<int>(UpsamplerKind::kPgcu))
    ->Unit(benchmark::kMillisecond);

void BM_EvaluateAll(benchmark::State& state) {
  const auto ref = random_tensor({4, 64, 64}, 1).cast<double>();
  const auto y = random_tensor({4, 64, 64}, 2).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_all(ref, y, 4));
}
BENCHMARK(BM_EvaluateAll)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
