#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgcu/backbone.hpp"
#include "pgcu/data.hpp"
#include "pgcu/errors.hpp"
#include "pgcu/metrics.hpp"
#include "pgcu/params.hpp"

namespace pgcu {

enum class LossKind { kL2, kL1 };

std::string_view loss_name(LossKind kind);
std::optional<LossKind> parse_loss(std::string_view name);

template <typename T>
struct LossResult {
  double value = 0;
  Tensor<T> grad;  // d value / d pred
};

// l2: mean squared error. l1: mean absolute error, subgradient 0 at ties.
template <typename T>
LossResult<T> compute_loss(const Tensor<T>& pred, const Tensor<T>& target, LossKind kind);

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename P>
struct AdamState {
  P m;
  P v;
  std::uint64_t step = 0;
};

template <typename P>
AdamState<P> make_adam_state(const P& params) {
  return {zeros_like_params(params), zeros_like_params(params), 0};
}

// Bias-corrected Adam update. Throws Errc::kNumeric naming the first
// gradient or parameter tensor that is not finite.
template <typename P>
void adam_step(P& params, const P& grads, AdamState<P>& state, const AdamConfig& cfg) {
  auto p = named_tensors(params);
  auto g = named_tensors(grads);
  auto m = named_tensors(state.m);
  auto v = named_tensors(state.v);
  for (const auto& [name, t] : g) {
    for (auto x : t->data())
      require(std::isfinite(x), Errc::kNumeric, "non-finite gradient in tensor '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1 - std::pow(cfg.beta1, t);
  const double c2 = 1 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& pt = *p[i].second;
    const auto& gt = *g[i].second;
    auto& mt = *m[i].second;
    auto& vt = *v[i].second;
    using T = typename std::remove_reference_t<decltype(pt)>::value_type;
    for (std::size_t k = 0; k < pt.size(); ++k) {
      const double gk = gt[k];
      const double mk = cfg.beta1 * mt[k] + (1 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * vt[k] + (1 - cfg.beta2) * gk * gk;
      mt[k] = static_cast<T>(mk);
      vt[k] = static_cast<T>(vk);
      pt[k] = static_cast<T>(pt[k] - cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps));
    }
    for (auto x : pt.data())
      require(std::isfinite(x), Errc::kNumeric,
              "parameter tensor '" + p[i].first + "' became non-finite");
  }
}

struct TrainConfig {
  LossKind loss = LossKind::kL2;
  AdamConfig adam;
  std::size_t batch_size = 4;
  std::size_t epochs = 20;
  // Evaluate on the test split every this many epochs (and after the last).
  std::size_t eval_every = 5;
  std::uint64_t seed = 0;
  // Empty disables checkpoints and the history file.
  std::string checkpoint_dir;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

using ModelParams = BackboneParams<float>;

struct BestEval {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double psnr = 0;
};

struct TrainState {
  ModelParams params;
  AdamState<ModelParams> optimizer;
  std::size_t epoch = 0;  // completed epochs
  std::optional<BestEval> best;
};

TrainState init_train_state(const BackboneConfig& model, std::uint64_t init_seed);

struct HistoryRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;  // mean training loss over the epoch
  MetricsReport test;

  bool operator==(const HistoryRecord&) const = default;
};

nlohmann::json history_to_json(const HistoryRecord& r);
HistoryRecord history_from_json(const nlohmann::json& j);

struct TrainResult {
  TrainState state;
  std::vector<HistoryRecord> history;
  std::vector<double> epoch_losses;
  MetricsReport final_test;
};

// Clamped model output for one triplet.
MSImage predict(const ModelParams& params, const BackboneConfig& model, const DatasetTriplet& t);

std::vector<MetricsReport> evaluate_each(const ModelParams& params, const BackboneConfig& model,
                                         const std::vector<DatasetTriplet>& samples);
MetricsReport evaluate(const ModelParams& params, const BackboneConfig& model,
                       const std::vector<DatasetTriplet>& samples);

// Mini-batch training with a shuffle derived from (seed, epoch), so a run
// resumed from an epoch-boundary checkpoint matches an uninterrupted one.
// Checkpoints and history go to cfg.checkpoint_dir at every evaluation.
using EvalCallback = std::function<void(const HistoryRecord&)>;

TrainResult train(const BackboneConfig& model, std::uint64_t init_seed, const Corpus& corpus,
                  const TrainConfig& cfg, std::optional<TrainState> resume = std::nullopt,
                  const EvalCallback& on_eval = {});

struct Checkpoint {
  BackboneConfig model;
  std::uint64_t init_seed = 0;
  TrainConfig train;
  TrainState state;
};

// <dir>/manifest.json plus params/, adam_m/, adam_v/ with one PFT1 file per
// tensor.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::vector<HistoryRecord> read_history(const std::filesystem::path& path);

}  // namespace pgcu
