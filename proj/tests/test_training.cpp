#include <gtest/gtest.h>

#include <cmath>

#include "pgcu/config_json.hpp"
#include "pgcu/training.hpp"
#include "support/expect_error.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace pgcu;
using oracle::random_tensor;
using testing_support::error_code;

namespace {

SynthConfig desk_data(std::size_t samples) {
  SynthConfig cfg;
  cfg.channels = 2;
  cfg.height = cfg.width = 16;
  cfg.scale = 4;
  cfg.num_samples = samples;
  cfg.motif_count = 1;
  cfg.seed = 3;
  return cfg;
}

Corpus desk_corpus(std::size_t train, std::size_t test) {
  Corpus c{desk_data(train + test), {}, {}};
  for (std::size_t i = 0; i < train + test; ++i)
    (i < train ? c.train : c.test).push_back(make_triplet(c.config, i));
  return c;
}

BackboneConfig desk_model(UpsamplerKind kind) {
  BackboneConfig cfg;
  cfg.num_res_blocks = 1;
  cfg.width = 8;
  cfg.upsampler.kind = kind;
  cfg.upsampler.channels = 2;
  cfg.upsampler.scale = 4;
  cfg.upsampler.espcnn_hidden = 4;
  cfg.upsampler.pgcu.pan_ds_blocks = 1;
  cfg.upsampler.pgcu.ms_ds_blocks = 0;
  cfg.upsampler.pgcu.feat_dim = 8;
  cfg.upsampler.pgcu.hidden_channels = 4;
  return cfg;
}

TrainConfig short_run(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 2;
  cfg.eval_every = 1;
  cfg.adam.lr = 1e-3;
  return cfg;
}

ConvParams<double> scalar_params(double w) {
  return {Tensor<double>({1}, {w}), Tensor<double>({1}, {0.0})};
}

}  // namespace

TEST(Loss, IdenticalInputsGiveZero) {
  Rng rng(1);
  const auto x = random_tensor({2, 4, 4}, rng, 0, 1);
  for (auto kind : {LossKind::kL2, LossKind::kL1}) {
    const auto r = compute_loss(x, x, kind);
    EXPECT_EQ(r.value, 0.0);
    for (double g : r.grad.data()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Loss, ScalarArithmetic) {
  const Tensor<double> pred({1}, {0.0}), target({1}, {1.0});
  const auto l2 = compute_loss(pred, target, LossKind::kL2);
  EXPECT_EQ(l2.value, 1.0);
  EXPECT_EQ(l2.grad[0], -2.0);
  const auto l1 = compute_loss(pred, target, LossKind::kL1);
  EXPECT_EQ(l1.value, 1.0);
  EXPECT_EQ(l1.grad[0], -1.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const auto target = random_tensor({2, 3, 3}, rng, 0, 1);
  auto pred = random_tensor({2, 3, 3}, rng, 0, 1);
  for (auto kind : {LossKind::kL2, LossKind::kL1}) {
    const auto g = compute_loss(pred, target, kind).grad;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double h = 1e-6, keep = pred[k];
      pred[k] = keep + h;
      const double up = compute_loss(pred, target, kind).value;
      pred[k] = keep - h;
      const double down = compute_loss(pred, target, kind).value;
      pred[k] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_LT(std::abs(fd - g[k]) / std::max(std::abs(g[k]), 1e-3), 1e-6) << k;
    }
  }
}

TEST(Loss, ShapeMismatchAndNames) {
  EXPECT_EQ(error_code([] {
              compute_loss(Tensor<double>({2, 2}), Tensor<double>({2, 3}), LossKind::kL2);
            }),
            Errc::kShape);
  EXPECT_EQ(parse_loss("l1"), LossKind::kL1);
  EXPECT_EQ(loss_name(LossKind::kL2), "l2");
  EXPECT_FALSE(parse_loss("huber"));
}

TEST(Adam, ZeroGradientLeavesParamsAndCountsStep) {
  auto p = scalar_params(0.5);
  auto state = make_adam_state(p);
  adam_step(p, zeros_like_params(p), state, AdamConfig{});
  EXPECT_EQ(p.weight[0], 0.5);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMatchesHandEvaluation) {
  // m = 0.1 g, v = 0.001 g^2; bias correction restores g and g^2.
  auto p = scalar_params(0.5);
  auto g = zeros_like_params(p);
  g.weight[0] = 0.2;
  g.bias[0] = -3.0;
  auto state = make_adam_state(p);
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  adam_step(p, g, state, cfg);
  EXPECT_NEAR(p.weight[0], 0.5 - 0.1 * 0.2 / (0.2 + 1e-8), 1e-15);
  EXPECT_NEAR(p.bias[0], 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(state.m.weight[0], 0.02, 1e-17);
  EXPECT_NEAR(state.v.weight[0], 0.001 * 0.04, 1e-18);
}

TEST(Adam, NonFiniteGradientNamesTheTensor) {
  auto p = scalar_params(0.5);
  auto g = zeros_like_params(p);
  g.bias[0] = std::nan("");
  auto state = make_adam_state(p);
  try {
    adam_step(p, g, state, AdamConfig{});
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNumeric);
    EXPECT_NE(std::string(e.what()).find("bias"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p.weight[0], 0.5);
}

TEST(TrainConfigJson, RoundTripAndValidation) {
  auto cfg = short_run(3);
  cfg.loss = LossKind::kL1;
  cfg.checkpoint_dir = "runs/x";
  const auto j = train_config_to_json(cfg);
  EXPECT_EQ(train_config_to_json(train_config_from_json(j)), j);
  for (auto field : {"lr", "batch_size", "epochs"}) {
    auto bad = j;
    bad[field] = 0;
    EXPECT_EQ(error_code([&] { train_config_from_json(bad).validate(); }), Errc::kConfig) << field;
  }
}

TEST(Train, IsDeterministic) {
  const auto corpus = desk_corpus(4, 2);
  const auto model = desk_model(UpsamplerKind::kPgcu);
  const auto a = train(model, 1, corpus, short_run(2));
  const auto b = train(model, 1, corpus, short_run(2));
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.state.optimizer.step, 4u);
  auto pa = named_tensors(std::as_const(a.state.params));
  auto pb = named_tensors(std::as_const(b.state.params));
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].second, *pb[i].second) << pa[i].first;
}

TEST(Train, EvaluationScheduleCountsEpochs) {
  const auto corpus = desk_corpus(3, 1);
  auto cfg = short_run(5);
  cfg.eval_every = 2;
  std::vector<std::size_t> seen;
  const auto r = train(desk_model(UpsamplerKind::kBicubic), 0, corpus, cfg,
                       std::nullopt, [&](const HistoryRecord& h) { seen.push_back(h.epoch); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{2, 4, 5}));
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.history.back().test, r.final_test);
  EXPECT_EQ(r.epoch_losses.size(), 5u);
  // Three samples, batches of two.
  EXPECT_EQ(r.history.front().step, 4u);
}

TEST(Train, UntrainedZeroBodyMatchesBareUpsampler) {
  const auto corpus = desk_corpus(1, 3);
  const auto model = desk_model(UpsamplerKind::kBicubic);
  auto state = init_train_state(model, 0);
  for (auto& conv : state.params.body) {
    conv.weight.fill(0);
    conv.bias.fill(0);
  }
  std::vector<MetricsReport> bare;
  for (const auto& s : corpus.test) {
    const auto up = bicubic_upsample(s.lrms.tensor().cast<float>(), 4);
    bare.push_back(evaluate_all(s.hrms, MSImage::from(up, /*clamp=*/true), 4));
  }
  EXPECT_EQ(evaluate(state.params, model, corpus.test), mean_report(bare));
}

TEST(Train, ResumeFromCheckpointIsBitExact) {
  const auto corpus = desk_corpus(4, 2);
  const auto model = desk_model(UpsamplerKind::kPgcu);
  TempDir full_dir, part_dir;

  auto full_cfg = short_run(4);
  full_cfg.checkpoint_dir = full_dir.path().string();
  const auto full = train(model, 2, corpus, full_cfg);

  auto part_cfg = short_run(2);
  part_cfg.checkpoint_dir = part_dir.path().string();
  train(model, 2, corpus, part_cfg);
  auto ckpt = load_checkpoint(part_dir / "checkpoint");
  EXPECT_EQ(ckpt.state.epoch, 2u);
  EXPECT_EQ(ckpt.init_seed, 2u);
  part_cfg.epochs = 4;
  const auto resumed = train(model, 2, corpus, part_cfg, std::move(ckpt.state));

  auto a = named_tensors(std::as_const(full.state.params));
  auto b = named_tensors(std::as_const(resumed.state.params));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
  EXPECT_EQ(full.final_test, resumed.final_test);
  // The resumed history file keeps the first two records and appends the rest.
  EXPECT_EQ(read_history(full_dir / "history.jsonl"), read_history(part_dir / "history.jsonl"));
  EXPECT_EQ(read_history(full_dir / "history.jsonl"), full.history);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  TempDir dir;
  const auto model = desk_model(UpsamplerKind::kEspcnn);
  Checkpoint ckpt{model, 9, short_run(3), init_train_state(model, 9)};
  ckpt.state.epoch = 3;
  ckpt.state.optimizer.step = 12;
  ckpt.state.best = BestEval{12, 3, 21.5};
  ckpt.state.optimizer.m.body[0].bias.fill(0.25f);
  save_checkpoint(ckpt, dir.path());
  const auto back = load_checkpoint(dir.path());
  EXPECT_EQ(backbone_config_to_json(back.model), backbone_config_to_json(model));
  EXPECT_EQ(train_config_to_json(back.train), train_config_to_json(ckpt.train));
  EXPECT_EQ(back.state.optimizer.step, 12u);
  ASSERT_TRUE(back.state.best);
  EXPECT_EQ(back.state.best->psnr, 21.5);
  EXPECT_EQ(back.state.optimizer.m.body[0].bias, ckpt.state.optimizer.m.body[0].bias);
  auto a = named_tensors(std::as_const(ckpt.state.params));
  auto b = named_tensors(std::as_const(back.state.params));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second);
}

TEST(Checkpoint, MissingManifestIsAnIoError) {
  TempDir dir;
  EXPECT_EQ(error_code([&] { load_checkpoint(dir.path()); }), Errc::kIo);
}

TEST(Train, SingleTripletOverfitsWithLearnedUpsamplers) {
  const auto corpus = desk_corpus(1, 1);
  for (auto kind : {UpsamplerKind::kTconv, UpsamplerKind::kPgcu}) {
    auto cfg = short_run(200);
    cfg.eval_every = 0;
    const auto r = train(desk_model(kind), 0, corpus, cfg);
    EXPECT_LT(r.epoch_losses.back(), 0.1 * r.epoch_losses.front()) << upsampler_name(kind);
  }
}

TEST(Train, RejectsMismatchedCorpus) {
  const auto corpus = desk_corpus(2, 1);
  auto model = desk_model(UpsamplerKind::kBicubic);
  model.upsampler.channels = 3;
  EXPECT_EQ(error_code([&] { train(model, 0, corpus, short_run(1)); }), Errc::kConfig);
}
