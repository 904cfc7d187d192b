#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <map>
#include <ostream>

#include "pgcu/analysis.hpp"
#include "pgcu/config_json.hpp"
#include "pgcu/io.hpp"
#include "pgcu/json_reader.hpp"
#include "pgcu/metrics.hpp"

namespace pgcu::cli {
namespace {

namespace fs = std::filesystem;

nlohmann::json read_json_file(const fs::path& path) {
  require(fs::exists(path), Errc::kIo, "file not found: " + path.string());
  const auto bytes = read_file_bytes(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kConfig, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(bool(os), Errc::kIo, "cannot write " + path.string());
  os << text;
  require(bool(os), Errc::kIo, "failed writing " + path.string());
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file())
      files[fs::relative(entry.path(), dir).generic_string()] = read_file_bytes(entry.path());
  return files;
}

// Accepts a checkpoint directory or a training output directory holding one.
fs::path find_checkpoint(const fs::path& path) {
  if (fs::exists(path / "manifest.json") && !fs::exists(path / "checkpoint")) return path;
  if (fs::exists(path / "checkpoint" / "manifest.json")) return path / "checkpoint";
  fail(Errc::kIo, "no checkpoint found at " + path.string());
}

std::string model_label(const BackboneConfig& m) { return std::string(upsampler_name(m.upsampler.kind)); }

bool has_trainable(const BackboneConfig& m) {
  return m.with_body || (Upsampler(m.upsampler).trainable() && !m.freeze_upsampler);
}

struct RunOutcome {
  MetricsReport test;
  std::vector<HistoryRecord> history;
};

RunOutcome run_one(const BackboneConfig& model, std::uint64_t seed, const Corpus& corpus,
                   TrainConfig train_cfg, const fs::path& run_dir) {
  train_cfg.seed = seed;
  train_cfg.checkpoint_dir = run_dir.string();
  if (!has_trainable(model)) {
    const auto params = init_backbone_params<float>(model, seed);
    const auto report = evaluate(params, model, corpus.test);
    write_text(run_dir / "metrics.json", nlohmann::json(report).dump(2) + "\n");
    return {report, {}};
  }
  TrainResult r = train(model, seed, corpus, train_cfg);
  write_text(run_dir / "metrics.json", nlohmann::json(r.final_test).dump(2) + "\n");
  return {r.final_test, std::move(r.history)};
}

struct Row {
  std::string label;
  std::vector<std::pair<std::uint64_t, MetricsReport>> per_seed;
  MetricsReport mean;
};

Row run_row(const std::string& label, const BackboneConfig& model,
            const std::vector<std::uint64_t>& seeds, const Corpus& corpus,
            const TrainConfig& train_cfg, const fs::path& dir, std::ostream& out) {
  Row row{label, {}, {}};
  std::vector<MetricsReport> reports;
  for (auto seed : seeds) {
    const auto outcome =
        run_one(model, seed, corpus, train_cfg, dir / ("seed_" + std::to_string(seed)));
    out << label << " seed " << seed << ": psnr " << outcome.test.psnr << " sam "
        << outcome.test.sam << '\n';
    row.per_seed.emplace_back(seed, outcome.test);
    reports.push_back(outcome.test);
  }
  row.mean = mean_report(reports);
  return row;
}

nlohmann::json rows_json(const std::vector<Row>& rows, const std::vector<std::string>& metrics) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& [seed, rep] : row.per_seed)
      seeds.push_back({{"seed", seed}, {"test", report_json(rep, metrics)}});
    arr.push_back({{"label", row.label}, {"mean", report_json(row.mean, metrics)}, {"seeds", seeds}});
  }
  nlohmann::json best = nlohmann::json::object();
  for (const auto& name : metrics) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double a = metric_value(rows[i].mean, name), cur = metric_value(rows[b].mean, name);
      if (higher_is_better(name) ? a > cur : a < cur) b = i;
    }
    if (!rows.empty()) best[name] = rows[b].label;
  }
  return {{"rows", arr}, {"best", best}};
}

std::string rows_table(const std::vector<Row>& rows, const std::string& header) {
  std::vector<std::pair<std::string, MetricsReport>> t;
  for (const auto& r : rows) t.emplace_back(r.label, r.mean);
  return render_table(t, header);
}

nlohmann::json with_upsampler(nlohmann::json model, std::string_view kind) {
  model["upsampler"] = std::string(kind);
  return model;
}

RunConfig with_model(const RunConfig& base, nlohmann::json model) {
  RunConfig rc = base;
  rc.model = std::move(model);
  return rc;
}

// ---- commands ------------------------------------------------------------

int cmd_generate(const fs::path& config, const fs::path& out_dir, std::ostream& out) {
  const RunConfig rc = load_run_config(config);
  const auto before = snapshot(out_dir);
  build_corpus(rc.data, out_dir);
  out << "manifest: " << (out_dir / "manifest.json").string() << '\n';
  if (!before.empty()) {
    const auto after = snapshot(out_dir);
    std::size_t changed = 0;
    for (const auto& [name, bytes] : after) {
      auto it = before.find(name);
      if (it == before.end() || it->second != bytes) ++changed;
    }
    if (changed == 0)
      out << "idempotent: all " << after.size() << " files byte-identical to the previous run\n";
    else
      out << "changed: " << changed << " of " << after.size() << " files differ from the previous run\n";
  }
  return kOk;
}

int cmd_train(const fs::path& config, const fs::path& corpus_dir, const fs::path& out_dir,
              bool resume, std::ostream& out) {
  const RunConfig rc = load_run_config(config);
  const Corpus corpus = load_corpus(corpus_dir);
  const BackboneConfig model = rc.resolve_model(corpus.config);
  TrainConfig train_cfg = rc.train;
  train_cfg.checkpoint_dir = out_dir.string();

  std::optional<TrainState> state;
  std::uint64_t init_seed = rc.init_seed;
  if (resume) {
    Checkpoint ck = load_checkpoint(out_dir / "checkpoint");
    require(backbone_config_to_json(ck.model) == backbone_config_to_json(model) &&
                ck.init_seed == init_seed,
            Errc::kConfig, "checkpoint model does not match the configuration");
    state = std::move(ck.state);
  }
  const TrainResult r = train(model, init_seed, corpus, train_cfg, std::move(state),
                              [&](const HistoryRecord& h) {
                                out << "epoch " << h.epoch << " step " << h.step << " loss "
                                    << h.loss << " test_psnr " << h.test.psnr << '\n';
                              });
  const auto report = report_json(r.final_test, rc.metrics);
  write_text(out_dir / "metrics.json", report.dump(2) + "\n");
  out << report.dump() << '\n';
  return kOk;
}

int cmd_evaluate(const fs::path& checkpoint, const fs::path& corpus_dir, const fs::path& out_file,
                 std::ostream& out) {
  const Checkpoint ck = load_checkpoint(find_checkpoint(checkpoint));
  const Corpus corpus = load_corpus(corpus_dir);
  require(corpus.config.channels == ck.model.upsampler.channels &&
              corpus.config.scale == ck.model.upsampler.scale,
          Errc::kConfig, "corpus channels/scale do not match the checkpoint");
  const auto per_sample = evaluate_each(ck.state.params, ck.model, corpus.test);
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < per_sample.size(); ++i)
    samples.push_back({{"id", corpus.test[i].id}, {"test", per_sample[i]}});
  const MetricsReport mean = mean_report(per_sample);
  if (!out_file.empty())
    write_text(out_file,
               nlohmann::json{{"test", mean}, {"per_sample", samples}}.dump(2) + "\n");
  out << nlohmann::json(mean).dump() << '\n';
  return kOk;
}

int cmd_compare(const fs::path& config, const fs::path& corpus_dir, const fs::path& out_dir,
                const std::vector<std::string>& names, const std::vector<std::uint64_t>& seeds,
                std::ostream& out) {
  const RunConfig rc = load_run_config(config);
  require(!names.empty(), Errc::kConfig, "--upsamplers is empty");
  require(!seeds.empty(), Errc::kConfig, "--seeds is empty");
  for (const auto& n : names)
    require(parse_upsampler(n).has_value(), Errc::kConfig, "unknown upsampler '" + n + "'");
  const Corpus corpus = load_corpus(corpus_dir);
  std::vector<BackboneConfig> models;
  for (const auto& n : names)
    models.push_back(with_model(rc, with_upsampler(rc.model, n)).resolve_model(corpus.config));

  std::vector<Row> rows;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto dir = out_dir / (std::to_string(i) + "_" + names[i]);
    rows.push_back(run_row(model_label(models[i]), models[i], seeds, corpus, rc.train, dir, out));
  }
  const std::string table = rows_table(rows, "upsampler");
  write_text(out_dir / "compare.txt", table);
  write_text(out_dir / "compare.json", rows_json(rows, rc.metrics).dump(2) + "\n");
  out << table;
  return kOk;
}

int cmd_ablate(const fs::path& config, const fs::path& corpus_dir, const fs::path& out_dir,
               const std::vector<std::uint64_t>& seeds, const std::vector<std::size_t>& dims,
               std::ostream& out) {
  const RunConfig rc = load_run_config(config);
  require(!seeds.empty(), Errc::kConfig, "--seeds is empty");
  require(!dims.empty(), Errc::kConfig, "--feat-dims is empty");
  const Corpus corpus = load_corpus(corpus_dir);

  const nlohmann::json base = with_upsampler(rc.model, "pgcu");
  auto variant = [&](bool use_pan, bool use_proj, std::optional<std::size_t> dim) {
    nlohmann::json m = base;
    if (!m.contains("pgcu")) m["pgcu"] = nlohmann::json::object();
    m["pgcu"]["use_pan"] = use_pan;
    m["pgcu"]["use_channel_projection"] = use_proj;
    if (dim) m["pgcu"]["feat_dim"] = *dim;
    return with_model(rc, m).resolve_model(corpus.config);
  };

  std::vector<std::pair<std::string, BackboneConfig>> grid;
  for (bool use_pan : {true, false})
    for (bool use_proj : {true, false})
      grid.emplace_back(std::string("pan=") + (use_pan ? "on" : "off") +
                            " proj=" + (use_proj ? "on" : "off"),
                        variant(use_pan, use_proj, std::nullopt));
  std::vector<std::pair<std::string, BackboneConfig>> sweep;
  for (auto d : dims) sweep.emplace_back("D=" + std::to_string(d), variant(true, true, d));

  std::vector<Row> grid_rows, sweep_rows;
  for (const auto& [label, model] : grid) {
    std::string dir = "grid_" + label;
    std::replace(dir.begin(), dir.end(), ' ', '_');
    std::replace(dir.begin(), dir.end(), '=', '-');
    grid_rows.push_back(run_row(label, model, seeds, corpus, rc.train, out_dir / dir, out));
  }
  for (const auto& [label, model] : sweep) {
    const std::string dir = "feat_dim_" + label.substr(2);
    sweep_rows.push_back(run_row(label, model, seeds, corpus, rc.train, out_dir / dir, out));
  }
  const std::string text = "PAN information / channel projection\n" +
                           rows_table(grid_rows, "variant") + "\nFeature length\n" +
                           rows_table(sweep_rows, "length");
  write_text(out_dir / "ablation.txt", text);
  write_text(out_dir / "ablation.json",
             nlohmann::json{{"grid", rows_json(grid_rows, rc.metrics)},
                            {"feat_dim", rows_json(sweep_rows, rc.metrics)}}
                     .dump(2) +
                 "\n");
  out << text;
  return kOk;
}

int cmd_analyze(const fs::path& checkpoint, const fs::path& input, const fs::path& out_dir,
                std::size_t k, std::uint64_t seed, std::ostream& out) {
  const auto ck_dir = find_checkpoint(checkpoint);
  const Checkpoint ck = load_checkpoint(ck_dir);
  require(ck.model.upsampler.kind == UpsamplerKind::kPgcu, Errc::kConfig,
          "checkpoint upsampler is '" + model_label(ck.model) + "'; analysis needs pgcu");
  const MSImage lrms = MSImage::from(load_tensor(input / "lrms.pft"));
  const PanImage pan = PanImage::from(load_tensor(input / "pan.pft"));
  require(lrms.channels() == ck.model.upsampler.channels, Errc::kConfig,
          "input channel count does not match the checkpoint");
  try {
    ck.model.upsampler.pgcu.num_values(lrms.height(), lrms.width(), pan.height(), pan.width());
  } catch (const Error& e) {
    fail(Errc::kConfig, std::string("input does not fit the checkpoint model: ") + e.what());
  }
  const auto trace = backbone_forward_traced(lrms.tensor().cast<float>(),
                                             pan.tensor().cast<float>(), ck.state.params, ck.model);
  const auto& pgcu_trace = std::get<PgcuTrace<float>>(trace.up.inner);
  PixelDistributionField field{{pgcu_trace.p.probs.cast<double>()},
                               ck_dir.generic_string(),
                               input.generic_string()};
  render_analysis(field, out_dir, k, seed);
  out << "summary: " << (out_dir / "summary.json").string() << '\n';
  return kOk;
}

}  // namespace

BackboneConfig RunConfig::resolve_model(const SynthConfig& corpus) const {
  BackboneConfig cfg = backbone_config_from_json(model, corpus.channels, corpus.scale, "model");
  if (cfg.upsampler.kind == UpsamplerKind::kPgcu) {
    try {
      cfg.upsampler.pgcu.num_values(corpus.height / corpus.scale, corpus.width / corpus.scale,
                                    corpus.height, corpus.width);
    } catch (const Error& e) {
      fail(Errc::kConfig, std::string("model.pgcu does not fit the data shape: ") + e.what());
    }
  }
  return cfg;
}

RunConfig parse_run_config(const nlohmann::json& doc) {
  RunConfig rc;
  rc.metrics = metric_names();
  JsonReader r(doc, "");
  if (r.has("data")) {
    r.consume("data");
    rc.data = synth_config_from_json(doc.at("data"), "data");
  }
  if (r.has("model")) {
    r.consume("model");
    rc.model = doc.at("model");
    require(rc.model.is_object(), Errc::kConfig, "model must be a JSON object");
    if (rc.model.contains("init_seed")) {
      JsonReader(nlohmann::json{{"init_seed", rc.model.at("init_seed")}}, "model")
          .optional("init_seed", rc.init_seed);
      rc.model.erase("init_seed");
    }
  }
  if (r.has("train")) {
    r.consume("train");
    rc.train = train_config_from_json(doc.at("train"), "train");
  }
  if (r.has("eval")) {
    auto e = r.child("eval");
    e.optional("metrics", rc.metrics);
    e.finish();
    for (const auto& m : rc.metrics) {
      const auto& all = metric_names();
      require(std::find(all.begin(), all.end(), m) != all.end(), Errc::kConfig,
              "unknown metric '" + m + "' in eval.metrics");
    }
  }
  if (r.has("analysis")) {
    auto a = r.child("analysis");
    a.optional("k", rc.analysis_k);
    a.optional("seed", rc.analysis_seed);
    a.finish();
    require(rc.analysis_k >= 1, Errc::kConfig, "analysis.k must be >= 1");
  }
  r.finish();
  rc.resolve_model(rc.data);
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_json_file(path));
}

nlohmann::json report_json(const MetricsReport& r, const std::vector<std::string>& names) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& name : metric_names())
    if (std::find(names.begin(), names.end(), name) != names.end()) j[name] = metric_value(r, name);
  return j;
}

int exit_code_for(const std::exception& e) {
  if (const auto* pe = dynamic_cast<const Error*>(&e)) {
    switch (pe->code()) {
      case Errc::kIo:
      case Errc::kBadMagic:
      case Errc::kTruncated:
      case Errc::kDimMismatch:
        return kIoError;
      case Errc::kNumeric:
        return kNumericError;
      default:
        return kConfigError;
    }
  }
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kIoError;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return kConfigError;
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pansharpening with probability-based global cross-modal upsampling", "pgcu"};
  app.require_subcommand(1, 1);

  std::string config, corpus, out_path, checkpoint, input;
  bool resume = false;
  std::vector<std::string> upsamplers{"nearest", "bicubic"};
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::size_t> feat_dims{8, 16, 32};
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("generate", "Build a synthetic Wald-protocol corpus");
  gen->add_option("--config", config, "Run configuration (JSON)")->required();
  gen->add_option("--out", out_path, "Corpus directory")->required();

  auto* trn = app.add_subcommand("train", "Train the backbone with its upsampler");
  trn->add_option("--config", config)->required();
  trn->add_option("--corpus", corpus)->required();
  trn->add_option("--out", out_path, "Run directory (checkpoint, history, metrics)")->required();
  trn->add_flag("--resume", resume, "Continue from <out>/checkpoint");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--corpus", corpus)->required();
  ev->add_option("--out", out_path, "Optional JSON report path");

  auto* cmp = app.add_subcommand("compare", "Compare upsamplers inside the same backbone");
  cmp->add_option("--config", config)->required();
  cmp->add_option("--corpus", corpus)->required();
  cmp->add_option("--out", out_path)->required();
  cmp->add_option("--upsamplers", upsamplers, "Comma-separated upsampler names")->delimiter(',');
  cmp->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');

  auto* abl = app.add_subcommand("ablate", "PAN / channel-projection grid and feature-length sweep");
  abl->add_option("--config", config)->required();
  abl->add_option("--corpus", corpus)->required();
  abl->add_option("--out", out_path)->required();
  abl->add_option("--seeds", seeds)->delimiter(',');
  abl->add_option("--feat-dims", feat_dims)->delimiter(',');

  auto* ana = app.add_subcommand("analyze", "Cluster and entropy maps of pixel distributions");
  ana->add_option("--checkpoint", checkpoint)->required();
  ana->add_option("--input", input, "Sample directory with lrms.pft and pan.pft")->required();
  ana->add_option("--out", out_path)->required();
  ana->add_option("--config", config, "Optional run configuration for analysis defaults");
  ana->add_option("--K", k, "Number of clusters");
  ana->add_option("--seed", seed, "Clustering seed");

  std::vector<const char*> argv{"pgcu"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_generate(config, out_path, out);
    if (trn->parsed()) return cmd_train(config, corpus, out_path, resume, out);
    if (ev->parsed()) return cmd_evaluate(checkpoint, corpus, out_path, out);
    if (cmp->parsed()) return cmd_compare(config, corpus, out_path, upsamplers, seeds, out);
    if (abl->parsed()) return cmd_ablate(config, corpus, out_path, seeds, feat_dims, out);
    if (ana->parsed()) {
      RunConfig rc;
      if (!config.empty()) rc = load_run_config(config);
      return cmd_analyze(checkpoint, input, out_path, k.value_or(rc.analysis_k),
                         seed.value_or(rc.analysis_seed), out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kConfigError;
}

}  // namespace pgcu::cli
