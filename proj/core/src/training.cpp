#include "pgcu/training.hpp"

#include <fstream>
#include <numeric>

#include "pgcu/config_json.hpp"
#include "pgcu/io.hpp"
#include "pgcu/json_reader.hpp"
#include "pgcu/random.hpp"

namespace pgcu {
namespace {

constexpr std::string_view kCheckpointFormat = "pgcu-checkpoint/1";
constexpr std::uint64_t kShuffleStream = 0x5f1e;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(bool(os), Errc::kIo, "cannot write " + path.string());
  os << text;
  require(bool(os), Errc::kIo, "failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), Errc::kIo, "file not found: " + path.string());
  const auto bytes = read_file_bytes(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kIo, path.string() + ": " + e.what());
  }
}

template <typename P>
void save_tensors(const P& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : named_tensors(params)) save_tensor(*t, dir / (name + ".pft"));
}

template <typename P>
void load_tensors(P& params, const std::filesystem::path& dir) {
  for (auto& [name, t] : named_tensors(params)) {
    Tensor<float> loaded = load_tensor(dir / (name + ".pft"));
    require(loaded.shape() == t->shape(), Errc::kConfig,
            "checkpoint tensor '" + name + "' has shape " + shape_string(loaded.shape()) +
                ", model expects " + shape_string(t->shape()));
    *t = std::move(loaded);
  }
}

std::string history_line(const HistoryRecord& r) { return history_to_json(r).dump() + "\n"; }

}  // namespace

std::string_view loss_name(LossKind kind) { return kind == LossKind::kL1 ? "l1" : "l2"; }

std::optional<LossKind> parse_loss(std::string_view name) {
  if (name == "l2") return LossKind::kL2;
  if (name == "l1") return LossKind::kL1;
  return std::nullopt;
}

template <typename T>
LossResult<T> compute_loss(const Tensor<T>& pred, const Tensor<T>& target, LossKind kind) {
  require(pred.shape() == target.shape(), Errc::kShape,
          "loss: shape mismatch " + shape_string(pred.shape()) + " vs " +
              shape_string(target.shape()));
  LossResult<T> out{0, zeros_like(pred)};
  const double n = static_cast<double>(pred.size());
  double acc = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double d = static_cast<double>(pred[k]) - static_cast<double>(target[k]);
    if (kind == LossKind::kL2) {
      acc += d * d;
      out.grad[k] = static_cast<T>(2 * d / n);
    } else {
      acc += std::abs(d);
      out.grad[k] = static_cast<T>(d > 0 ? 1 / n : d < 0 ? -1 / n : 0);
    }
  }
  out.value = acc / n;
  return out;
}

template LossResult<float> compute_loss(const Tensor<float>&, const Tensor<float>&, LossKind);
template LossResult<double> compute_loss(const Tensor<double>&, const Tensor<double>&, LossKind);

void TrainConfig::validate() const {
  require(adam.lr > 0 && std::isfinite(adam.lr), Errc::kConfig, "train.lr must be > 0");
  require(adam.beta1 >= 0 && adam.beta1 < 1, Errc::kConfig, "train.beta1 must be in [0, 1)");
  require(adam.beta2 >= 0 && adam.beta2 < 1, Errc::kConfig, "train.beta2 must be in [0, 1)");
  require(adam.eps > 0, Errc::kConfig, "train.eps must be > 0");
  require(batch_size >= 1, Errc::kConfig, "train.batch_size must be >= 1");
  require(epochs >= 1, Errc::kConfig, "train.epochs must be >= 1");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"loss", std::string(loss_name(cfg.loss))},
          {"lr", cfg.adam.lr},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"eps", cfg.adam.eps},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"eval_every", cfg.eval_every},
          {"seed", cfg.seed},
          {"checkpoint_dir", cfg.checkpoint_dir}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path) {
  TrainConfig cfg;
  JsonReader r(j, path);
  std::string loss(loss_name(cfg.loss));
  r.optional("loss", loss);
  const auto kind = parse_loss(loss);
  require(kind.has_value(), Errc::kConfig,
          "unknown loss '" + loss + "' in " + r.field("loss") + " (expected l1 or l2)");
  cfg.loss = *kind;
  r.optional("lr", cfg.adam.lr);
  r.optional("beta1", cfg.adam.beta1);
  r.optional("beta2", cfg.adam.beta2);
  r.optional("eps", cfg.adam.eps);
  r.optional("batch_size", cfg.batch_size);
  r.optional("epochs", cfg.epochs);
  r.optional("eval_every", cfg.eval_every);
  r.optional("seed", cfg.seed);
  r.optional("checkpoint_dir", cfg.checkpoint_dir);
  r.finish();
  cfg.validate();
  return cfg;
}

TrainState init_train_state(const BackboneConfig& model, std::uint64_t init_seed) {
  TrainState s{init_backbone_params<float>(model, init_seed), {}, 0, std::nullopt};
  s.optimizer = make_adam_state(s.params);
  return s;
}

nlohmann::json history_to_json(const HistoryRecord& r) {
  return {{"step", r.step}, {"epoch", r.epoch}, {"loss", r.loss}, {"test", r.test}};
}

HistoryRecord history_from_json(const nlohmann::json& j) {
  return {j.at("step").get<std::uint64_t>(), j.at("epoch").get<std::size_t>(),
          j.at("loss").get<double>(), j.at("test").get<MetricsReport>()};
}

MSImage predict(const ModelParams& params, const BackboneConfig& model, const DatasetTriplet& t) {
  return backbone_apply(t.lrms, t.pan, params, model);
}

std::vector<MetricsReport> evaluate_each(const ModelParams& params, const BackboneConfig& model,
                                         const std::vector<DatasetTriplet>& samples) {
  std::vector<MetricsReport> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back(evaluate_all(s.hrms, predict(params, model, s), model.upsampler.scale));
  return out;
}

MetricsReport evaluate(const ModelParams& params, const BackboneConfig& model,
                       const std::vector<DatasetTriplet>& samples) {
  return mean_report(evaluate_each(params, model, samples));
}

std::vector<HistoryRecord> read_history(const std::filesystem::path& path) {
  std::vector<HistoryRecord> out;
  std::ifstream is(path);
  if (!is) return out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(history_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::kIo, path.string() + ": " + e.what());
    }
  }
  return out;
}

TrainResult train(const BackboneConfig& model, std::uint64_t init_seed, const Corpus& corpus,
                  const TrainConfig& cfg, std::optional<TrainState> resume,
                  const EvalCallback& on_eval) {
  cfg.validate();
  model.validate();
  require(!corpus.train.empty(), Errc::kConfig, "training split is empty");
  require(corpus.config.channels == model.upsampler.channels &&
              corpus.config.scale == model.upsampler.scale,
          Errc::kConfig, "corpus channels/scale do not match the model");

  TrainResult result{resume ? std::move(*resume) : init_train_state(model, init_seed), {}, {}, {}};
  TrainState& state = result.state;

  const bool checkpoints = !cfg.checkpoint_dir.empty();
  const std::filesystem::path ckpt_dir = cfg.checkpoint_dir;
  const auto history_path = ckpt_dir / "history.jsonl";
  if (checkpoints) {
    std::filesystem::create_directories(ckpt_dir);
    std::string kept;
    if (resume) {
      for (const auto& r : read_history(history_path))
        if (r.epoch <= state.epoch) kept += history_line(r);
    }
    write_text(history_path, kept);
  }

  const bool has_params = parameter_count(state.params) > 0;
  std::vector<std::size_t> order(corpus.train.size());

  for (std::size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(cfg.seed, kShuffleStream), epoch));
    shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const auto batch = static_cast<float>(end - start);
      ModelParams grads = zeros_like_params(state.params);
      for (std::size_t b = start; b < end; ++b) {
        const DatasetTriplet& s = corpus.train[order[b]];
        const auto lrms = s.lrms.tensor().cast<float>();
        const auto pan = s.pan.tensor().cast<float>();
        const auto target = s.hrms.tensor().cast<float>();
        const auto trace = backbone_forward_traced(lrms, pan, state.params, model);
        auto loss = compute_loss(trace.output, target, cfg.loss);
        require(std::isfinite(loss.value), Errc::kNumeric,
                "non-finite loss on sample " + s.id + " at epoch " + std::to_string(epoch));
        epoch_loss += loss.value;
        if (!has_params) continue;
        for (auto& g : loss.grad.data()) g /= batch;
        const ModelParams sample_grads = backbone_backward(trace, state.params, model, loss.grad);
        auto dst = named_tensors(grads);
        auto src = named_tensors(sample_grads);
        for (std::size_t i = 0; i < dst.size(); ++i) accumulate(*dst[i].second, *src[i].second);
      }
      if (has_params) adam_step(state.params, grads, state.optimizer, cfg.adam);
      else ++state.optimizer.step;
    }
    state.epoch = epoch + 1;
    epoch_loss /= static_cast<double>(order.size());
    result.epoch_losses.push_back(epoch_loss);

    const bool last = state.epoch == cfg.epochs;
    if (last || (cfg.eval_every > 0 && state.epoch % cfg.eval_every == 0)) {
      HistoryRecord rec{state.optimizer.step, state.epoch, epoch_loss,
                        evaluate(state.params, model, corpus.test)};
      if (!state.best || rec.test.psnr > state.best->psnr)
        state.best = BestEval{rec.step, rec.epoch, rec.test.psnr};
      result.history.push_back(rec);
      if (on_eval) on_eval(rec);
      if (last) result.final_test = rec.test;
      if (checkpoints) {
        std::ofstream(history_path, std::ios::binary | std::ios::app) << history_line(rec);
        save_checkpoint({model, init_seed, cfg, state}, ckpt_dir / "checkpoint");
      }
    }
  }
  if (result.history.empty()) result.final_test = evaluate(state.params, model, corpus.test);
  return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, Errc::kIo, "cannot create " + dir.string() + ": " + ec.message());
  save_tensors(ckpt.state.params, dir / "params");
  save_tensors(ckpt.state.optimizer.m, dir / "adam_m");
  save_tensors(ckpt.state.optimizer.v, dir / "adam_v");

  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : named_tensors(ckpt.state.params))
    names.push_back({{"name", name}, {"shape", t->shape()}});
  nlohmann::json best = nullptr;
  if (ckpt.state.best)
    best = {{"step", ckpt.state.best->step},
            {"epoch", ckpt.state.best->epoch},
            {"psnr", ckpt.state.best->psnr}};
  const nlohmann::json manifest{
      {"format", kCheckpointFormat},
      {"channels", ckpt.model.upsampler.channels},
      {"scale", ckpt.model.upsampler.scale},
      {"model", backbone_config_to_json(ckpt.model)},
      {"init_seed", ckpt.init_seed},
      {"train", train_config_to_json(ckpt.train)},
      {"step", ckpt.state.optimizer.step},
      {"epoch", ckpt.state.epoch},
      {"best", best},
      {"parameter_count", parameter_count(ckpt.state.params)},
      {"tensors", names}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const nlohmann::json m = read_json(dir / "manifest.json");
  require(m.value("format", "") == kCheckpointFormat, Errc::kConfig,
          dir.string() + " is not a checkpoint directory");
  Checkpoint ckpt;
  try {
    ckpt.model = backbone_config_from_json(m.at("model"), m.at("channels").get<std::size_t>(),
                                           m.at("scale").get<std::size_t>(), "checkpoint.model");
    ckpt.init_seed = m.at("init_seed").get<std::uint64_t>();
    ckpt.train = train_config_from_json(m.at("train"), "checkpoint.train");
    ckpt.state = init_train_state(ckpt.model, ckpt.init_seed);
    ckpt.state.optimizer.step = m.at("step").get<std::uint64_t>();
    ckpt.state.epoch = m.at("epoch").get<std::size_t>();
    if (!m.at("best").is_null()) {
      const auto& b = m.at("best");
      ckpt.state.best = BestEval{b.at("step").get<std::uint64_t>(),
                                 b.at("epoch").get<std::size_t>(), b.at("psnr").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kConfig, (dir / "manifest.json").string() + ": " + e.what());
  }
  load_tensors(ckpt.state.params, dir / "params");
  load_tensors(ckpt.state.optimizer.m, dir / "adam_m");
  load_tensors(ckpt.state.optimizer.v, dir / "adam_v");
  return ckpt;
}

}  // namespace pgcu
