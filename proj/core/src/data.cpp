#include "pgcu/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "pgcu/errors.hpp"
#include "pgcu/io.hpp"
#include "pgcu/json_reader.hpp"
#include "pgcu/random.hpp"
#include "pgcu/resample.hpp"

namespace pgcu {
namespace {

constexpr std::size_t kBaseFields = 3;
constexpr std::size_t kWavesPerField = 3;
constexpr std::size_t kStampsPerMotif = 2;

struct Wave {
  double fy, fx, phase, amp;
};

// Sum of a few planar sinusoids at 0.5..2 cycles per image.
std::vector<double> smooth_field(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<Wave> waves(kWavesPerField);
  for (auto& wv : waves) {
    wv.fy = rng.uniform(0.5, 2.0) * (rng.uniform() < 0.5 ? -1 : 1);
    wv.fx = rng.uniform(0.5, 2.0);
    wv.phase = rng.uniform(0, 2 * std::numbers::pi);
    wv.amp = rng.uniform(0.5, 1.0);
  }
  std::vector<double> f(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double v = 0;
      for (const auto& wv : waves) {
        v += wv.amp * std::sin(2 * std::numbers::pi *
                                   (wv.fy * double(i) / double(h) + wv.fx * double(j) / double(w)) +
                               wv.phase);
      }
      f[i * w + j] = v / kWavesPerField;
    }
  }
  return f;
}

std::size_t motif_size(const SynthConfig& cfg) {
  return std::max<std::size_t>(3, std::min(cfg.height, cfg.width) / 8);
}

std::vector<double> gaussian_taps(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3 * sigma));
  std::vector<double> g(2 * radius + 1);
  double sum = 0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    g[k + radius] = std::exp(-double(k * k) / (2 * sigma * sigma));
    sum += g[k + radius];
  }
  for (auto& v : g) v /= sum;
  return g;
}

Taps blur_taps(std::size_t n, const std::vector<double>& g) {
  const auto radius = static_cast<std::ptrdiff_t>(g.size() / 2);
  Taps taps(n);
  for (std::size_t o = 0; o < n; ++o) {
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
      const auto idx = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(o) + k, 0, std::ptrdiff_t(n) - 1);
      taps[o].emplace_back(static_cast<std::size_t>(idx), g[k + radius]);
    }
  }
  return taps;
}

std::uint64_t split_hash(std::uint64_t seed, std::size_t index) {
  return derive_seed(derive_seed(seed, 0x5e11), index);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary);
  require(bool(os), Errc::kIo, "cannot write " + path.string());
  os << j.dump(2) << '\n';
  require(bool(os), Errc::kIo, "failed writing " + path.string());
}

}  // namespace

std::vector<double> SynthConfig::pan_weights() const {
  if (!spectral_weights.empty()) return spectral_weights;
  return std::vector<double>(channels, 1.0 / static_cast<double>(channels));
}

void SynthConfig::validate() const {
  require(channels >= 1, Errc::kConfig, "data.channels must be >= 1");
  require(height >= 1 && width >= 1, Errc::kConfig, "data.height and data.width must be >= 1");
  require(scale >= 1, Errc::kConfig, "data.scale must be >= 1");
  require(height % scale == 0, Errc::kConfig,
          "data.height (" + std::to_string(height) + ") is not divisible by data.scale (" +
              std::to_string(scale) + ")");
  require(width % scale == 0, Errc::kConfig,
          "data.width (" + std::to_string(width) + ") is not divisible by data.scale (" +
              std::to_string(scale) + ")");
  require(num_samples >= 1, Errc::kConfig, "data.num_samples must be >= 1");
  require(blur_sigma >= 0 && std::isfinite(blur_sigma), Errc::kConfig,
          "data.blur_sigma must be finite and >= 0");
  require(test_fraction >= 0 && test_fraction <= 1, Errc::kConfig,
          "data.test_fraction must be in [0, 1]");
  if (motif_count > 0) {
    const std::size_t m = motif_size(*this);
    require(height >= 2 * m + 2 && width >= 2 * m + 2, Errc::kConfig,
            "data.height/width too small for motifs; set data.motif_count to 0");
  }
  if (!spectral_weights.empty()) {
    require(spectral_weights.size() == channels, Errc::kConfig,
            "data.spectral_weights must have data.channels entries");
    double sum = 0;
    for (double w : spectral_weights) {
      require(w >= 0, Errc::kConfig, "data.spectral_weights must be non-negative");
      sum += w;
    }
    require(std::abs(sum - 1) < 1e-9, Errc::kConfig, "data.spectral_weights must sum to 1");
  }
}

nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
  return {{"channels", cfg.channels},       {"height", cfg.height},
          {"width", cfg.width},             {"scale", cfg.scale},
          {"num_samples", cfg.num_samples}, {"seed", cfg.seed},
          {"motif_count", cfg.motif_count}, {"spectral_weights", cfg.spectral_weights},
          {"blur_sigma", cfg.blur_sigma},   {"test_fraction", cfg.test_fraction}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, const std::string& path) {
  SynthConfig cfg;
  JsonReader r(j, path);
  r.optional("channels", cfg.channels);
  r.optional("height", cfg.height);
  r.optional("width", cfg.width);
  r.optional("scale", cfg.scale);
  r.optional("num_samples", cfg.num_samples);
  r.optional("seed", cfg.seed);
  r.optional("motif_count", cfg.motif_count);
  r.optional("spectral_weights", cfg.spectral_weights);
  r.optional("blur_sigma", cfg.blur_sigma);
  r.optional("test_fraction", cfg.test_fraction);
  r.finish();
  cfg.validate();
  return cfg;
}

SynthSample synth_hrms(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  const std::size_t c = cfg.channels, h = cfg.height, w = cfg.width;
  Rng rng(derive_seed(cfg.seed, index));

  std::vector<std::vector<double>> base;
  for (std::size_t f = 0; f < kBaseFields; ++f) base.push_back(smooth_field(h, w, rng));

  Tensor<double> img({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> mix(kBaseFields);
    for (auto& m : mix) m = rng.uniform(-1, 1);
    const double offset = rng.uniform(0.3, 0.7);
    for (std::size_t p = 0; p < h * w; ++p) {
      double v = offset;
      for (std::size_t f = 0; f < kBaseFields; ++f) v += 0.25 * mix[f] * base[f][p];
      img[ch * h * w + p] = v;
    }
  }

  std::vector<MotifStamp> all_stamps;
  const std::size_t m = motif_size(cfg);
  const double min_dist = static_cast<double>(h) / 2;
  for (std::size_t k = 0; k < cfg.motif_count; ++k) {
    // Binary pattern on 2x2 cells with a per-channel spectral signature.
    const std::size_t cells = (m + 1) / 2;
    std::vector<double> pattern(cells * cells);
    for (auto& p : pattern) p = rng.uniform() < 0.5 ? 0.15 : 1.0;
    std::vector<double> signature(c);
    for (auto& s : signature) s = rng.uniform(0.2, 1.0);

    std::vector<MotifStamp> stamps;
    const std::size_t max_r = h - m, max_c = w - m;
    auto dist = [](const MotifStamp& a, std::size_t r, std::size_t col) {
      const double dr = double(a.row) - double(r), dc = double(a.col) - double(col);
      return std::sqrt(dr * dr + dc * dc);
    };
    stamps.push_back({k, rng.below(max_r + 1), rng.below(max_c + 1), m});
    while (stamps.size() < kStampsPerMotif) {
      std::size_t r = 0, col = 0;
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        r = rng.below(max_r + 1);
        col = rng.below(max_c + 1);
        placed = dist(stamps.front(), r, col) > min_dist;
      }
      if (!placed) {
        // Opposite corner of the first stamp is always far enough.
        r = stamps.front().row < max_r / 2 ? max_r : 0;
        col = stamps.front().col < max_c / 2 ? max_c : 0;
      }
      stamps.push_back({k, r, col, m});
    }
    for (const auto& st : stamps) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < m; ++a)
          for (std::size_t b = 0; b < m; ++b)
            img(ch, st.row + a, st.col + b) = signature[ch] * pattern[(a / 2) * cells + b / 2];
    }
    all_stamps.insert(all_stamps.end(), stamps.begin(), stamps.end());
  }
  return {MSImage::from_tensor(std::move(img), /*clamp=*/true), std::move(all_stamps)};
}

PanImage simulate_pan(const MSImage& hrms, const std::vector<double>& weights, double blur_sigma) {
  const std::size_t c = hrms.channels(), h = hrms.height(), w = hrms.width();
  require(weights.size() == c, Errc::kDomain,
          "pan weights: expected " + std::to_string(c) + " entries, got " +
              std::to_string(weights.size()));
  double sum = 0;
  for (double wt : weights) {
    require(wt >= 0, Errc::kDomain, "pan weights must be non-negative");
    sum += wt;
  }
  require(std::abs(sum - 1) < 1e-9, Errc::kDomain, "pan weights must sum to 1");
  require(blur_sigma >= 0, Errc::kDomain, "blur sigma must be >= 0");

  Tensor<double> pan({1, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p) pan[p] += weights[ch] * hrms.tensor()[ch * h * w + p];
  if (blur_sigma > 0) {
    const auto g = gaussian_taps(blur_sigma);
    pan = resample_separable(pan, blur_taps(h, g), blur_taps(w, g));
  }
  return PanImage::from_tensor(pan.reshaped({h, w}), /*clamp=*/true);
}

MSImage wald_degrade(const MSImage& hrms, std::size_t r) {
  require(r >= 1, Errc::kShape, "wald_degrade: scale must be >= 1");
  require(hrms.height() % r == 0 && hrms.width() % r == 0, Errc::kShape,
          "wald_degrade: " + shape_string(hrms.tensor().shape()) + " not divisible by " +
              std::to_string(r));
  if (r == 1) return hrms;
  return MSImage::from_tensor(resample_separable(hrms.tensor(), downsample_taps(hrms.height(), r),
                                                 downsample_taps(hrms.width(), r)),
                              /*clamp=*/true);
}

double total_variation(const MSImage& img) {
  double tv = 0;
  for (std::size_t ch = 0; ch < img.channels(); ++ch) {
    for (std::size_t i = 0; i < img.height(); ++i) {
      for (std::size_t j = 0; j < img.width(); ++j) {
        if (i + 1 < img.height()) tv += std::abs(img(ch, i + 1, j) - img(ch, i, j));
        if (j + 1 < img.width()) tv += std::abs(img(ch, i, j + 1) - img(ch, i, j));
      }
    }
  }
  return tv;
}

std::string sample_id(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "sample_" + digits;
}

DatasetTriplet make_triplet(const SynthConfig& cfg, std::size_t index) {
  MSImage hrms = synth_hrms(cfg, index).hrms;
  MSImage lrms = wald_degrade(hrms, cfg.scale);
  PanImage pan = simulate_pan(hrms, cfg.pan_weights(), cfg.blur_sigma);
  return {sample_id(index), std::move(hrms), std::move(lrms), std::move(pan)};
}

std::vector<std::size_t> test_indices(const SynthConfig& cfg) {
  std::vector<std::size_t> order(cfg.num_samples);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = split_hash(cfg.seed, a), hb = split_hash(cfg.seed, b);
    return ha != hb ? ha < hb : a < b;
  });
  const auto n_test = static_cast<std::size_t>(
      std::llround(cfg.test_fraction * static_cast<double>(cfg.num_samples)));
  order.resize(std::min(n_test, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

nlohmann::json build_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, Errc::kIo, "cannot create " + out_dir.string() + ": " + ec.message());

  const auto test = test_indices(cfg);
  nlohmann::json samples = nlohmann::json::array();
  nlohmann::json train_ids = nlohmann::json::array(), test_ids = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.num_samples; ++i) {
    SynthSample synth = synth_hrms(cfg, i);
    const MSImage lrms = wald_degrade(synth.hrms, cfg.scale);
    const PanImage pan = simulate_pan(synth.hrms, cfg.pan_weights(), cfg.blur_sigma);
    const std::string id = sample_id(i);
    const auto dir = out_dir / id;
    std::filesystem::create_directories(dir, ec);
    require(!ec, Errc::kIo, "cannot create " + dir.string() + ": " + ec.message());
    save_tensor(synth.hrms.tensor(), dir / "hrms.pft");
    save_tensor(lrms.tensor(), dir / "lrms.pft");
    save_tensor(pan.tensor(), dir / "pan.pft");

    const bool is_test = std::binary_search(test.begin(), test.end(), i);
    (is_test ? test_ids : train_ids).push_back(id);
    nlohmann::json stamps = nlohmann::json::array();
    for (const auto& s : synth.stamps) stamps.push_back({s.motif, s.row, s.col, s.size});
    samples.push_back({{"id", id},
                       {"split", is_test ? "test" : "train"},
                       {"hrms", id + "/hrms.pft"},
                       {"lrms", id + "/lrms.pft"},
                       {"pan", id + "/pan.pft"},
                       {"motif_stamps", stamps}});
  }
  const std::size_t h = cfg.height, w = cfg.width, r = cfg.scale;
  nlohmann::json manifest{
      {"format", "pgcu-corpus/1"},
      {"seed", cfg.seed},
      {"config", synth_config_to_json(cfg)},
      {"shapes",
       {{"hrms", {cfg.channels, h, w}}, {"lrms", {cfg.channels, h / r, w / r}}, {"pan", {h, w}}}},
      {"split", {{"train", train_ids}, {"test", test_ids}}},
      {"samples", samples}};
  write_json(out_dir / "manifest.json", manifest);
  return manifest;
}

DatasetTriplet load_triplet(const std::filesystem::path& sample_dir, const std::string& id) {
  auto load_ms = [&](const char* name) {
    try {
      return MSImage::from(load_tensor(sample_dir / name));
    } catch (const Error& e) {
      if (e.code() == Errc::kDomain || e.code() == Errc::kShape)
        fail(Errc::kIo, (sample_dir / name).string() + ": " + e.what());
      throw;
    }
  };
  MSImage hrms = load_ms("hrms.pft");
  MSImage lrms = load_ms("lrms.pft");
  Tensor<float> pan_t = load_tensor(sample_dir / "pan.pft");
  require(pan_t.rank() == 2, Errc::kIo, (sample_dir / "pan.pft").string() + ": expected [H][W]");
  return {id, std::move(hrms), std::move(lrms), PanImage::from(pan_t)};
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  require(std::filesystem::exists(manifest_path), Errc::kIo,
          "corpus manifest not found: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    const auto bytes = read_file_bytes(manifest_path);
    manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kIo, manifest_path.string() + ": " + e.what());
  }
  Corpus corpus;
  corpus.config = synth_config_from_json(manifest.at("config"), "manifest.config");
  const auto& cfg = corpus.config;
  const Shape hrms_shape{cfg.channels, cfg.height, cfg.width};
  const Shape lrms_shape{cfg.channels, cfg.height / cfg.scale, cfg.width / cfg.scale};
  const Shape pan_shape{cfg.height, cfg.width};
  for (const auto& s : manifest.at("samples")) {
    const auto id = s.at("id").get<std::string>();
    DatasetTriplet t = load_triplet(dir / id, id);
    require(t.hrms.tensor().shape() == hrms_shape && t.lrms.tensor().shape() == lrms_shape &&
                t.pan.tensor().shape() == pan_shape,
            Errc::kIo, "sample " + id + " does not match the manifest shapes");
    (s.at("split").get<std::string>() == "test" ? corpus.test : corpus.train)
        .push_back(std::move(t));
  }
  return corpus;
}

}  // namespace pgcu
