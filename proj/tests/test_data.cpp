#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "pgcu/data.hpp"
#include "pgcu/io.hpp"
#include "support/expect_error.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace pgcu;
using oracle::random_tensor;
using testing_support::error_code;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.channels = 3;
  cfg.height = 32;
  cfg.width = 32;
  cfg.num_samples = 10;
  cfg.seed = 5;
  return cfg;
}

double keys(double x) {
  const double a = -0.5, t = std::abs(x);
  if (t <= 1) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
  if (t < 2) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
  return 0;
}

// Stretched-kernel downsample of one row, evaluated directly.
std::vector<double> stretched_downsample(const std::vector<double>& x, std::size_t r) {
  const long n = long(x.size());
  const double s = double(r);
  std::vector<double> y(x.size() / r);
  for (std::size_t o = 0; o < y.size(); ++o) {
    const double centre = (double(o) + 0.5) * s - 0.5;
    double acc = 0, total = 0;
    for (long i = long(std::floor(centre - 2 * s)); i <= long(std::ceil(centre + 2 * s)); ++i) {
      const double w = keys((double(i) - centre) / s);
      acc += w * x[std::size_t(std::clamp(i, 0L, n - 1))];
      total += w;
    }
    y[o] = std::clamp(acc / total, 0.0, 1.0);
  }
  return y;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(SynthConfig, ValidationNamesTheField) {
  auto cfg = small_config();
  cfg.height = 30;
  try {
    cfg.validate();
    FAIL() << "expected a config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kConfig);
    EXPECT_NE(std::string(e.what()).find("data.height"), std::string::npos) << e.what();
  }
  cfg = small_config();
  cfg.spectral_weights = {0.5, 0.5, 0.5};
  EXPECT_EQ(error_code([&] { cfg.validate(); }), Errc::kConfig);
  cfg.spectral_weights = {0.5, 0.5};
  EXPECT_EQ(error_code([&] { cfg.validate(); }), Errc::kConfig);
}

TEST(SynthConfig, JsonRoundTripAndUnknownFields) {
  auto cfg = small_config();
  cfg.spectral_weights = {0.2, 0.3, 0.5};
  const auto j = synth_config_to_json(cfg);
  EXPECT_EQ(synth_config_to_json(synth_config_from_json(j)), j);
  auto bad = j;
  bad["colour"] = 1;
  EXPECT_EQ(error_code([&] { synth_config_from_json(bad); }), Errc::kConfig);
}

TEST(SynthHrms, DeterministicPerSeedAndIndex) {
  const auto cfg = small_config();
  EXPECT_EQ(synth_hrms(cfg, 3).hrms.tensor(), synth_hrms(cfg, 3).hrms.tensor());
  EXPECT_NE(synth_hrms(cfg, 3).hrms.tensor(), synth_hrms(cfg, 4).hrms.tensor());
  auto other = cfg;
  other.seed = 6;
  EXPECT_NE(synth_hrms(cfg, 3).hrms.tensor(), synth_hrms(other, 3).hrms.tensor());
}

TEST(SynthHrms, ShapeRangeAndDistinctChannels) {
  const auto cfg = small_config();
  const auto s = synth_hrms(cfg, 0);
  const auto& t = s.hrms.tensor();
  EXPECT_EQ(t.shape(), (Shape{3, 32, 32}));
  for (double v : t.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  double diff = 0;
  for (std::size_t k = 0; k < 32 * 32; ++k) diff += std::abs(t[k] - t[32 * 32 + k]);
  EXPECT_GT(diff, 1.0);
}

TEST(SynthHrms, MotifsAddTexture) {
  auto with = small_config();
  auto without = with;
  without.motif_count = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto plain = synth_hrms(without, i);
    EXPECT_TRUE(plain.stamps.empty());
    EXPECT_LT(total_variation(plain.hrms), total_variation(synth_hrms(with, i).hrms)) << i;
  }
}

TEST(SynthHrms, EveryMotifHasTwoDistantStamps) {
  auto cfg = small_config();
  cfg.height = cfg.width = 64;
  cfg.motif_count = 6;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto s = synth_hrms(cfg, i);
    for (std::size_t m = 0; m < cfg.motif_count; ++m) {
      std::vector<MotifStamp> mine;
      for (const auto& st : s.stamps)
        if (st.motif == m) mine.push_back(st);
      ASSERT_GE(mine.size(), 2u);
      double best = 0;
      for (const auto& a : mine)
        for (const auto& b : mine)
          best = std::max(best, std::hypot(double(a.row) - double(b.row),
                                           double(a.col) - double(b.col)));
      EXPECT_GT(best, 32.0) << "sample " << i << " motif " << m;
      for (const auto& st : mine) {
        EXPECT_LE(st.row + st.size, 64u);
        EXPECT_LE(st.col + st.size, 64u);
      }
    }
  }
}

TEST(SimulatePan, OneHotWeightsWithoutBlurCopyTheChannel) {
  const auto hrms = synth_hrms(small_config(), 1).hrms;
  const auto pan = simulate_pan(hrms, {1, 0, 0}, 0);
  for (std::size_t k = 0; k < 32 * 32; ++k) EXPECT_EQ(pan.tensor()[k], hrms.tensor()[k]);
}

TEST(SimulatePan, ConstantAndAveragedInputs) {
  const auto flat = MSImage::from(Tensor<double>({3, 8, 8}, 0.3));
  const auto pan = simulate_pan(flat, {0.2, 0.3, 0.5}, 0.5);
  for (double v : pan.tensor().data()) EXPECT_NEAR(v, 0.3, 1e-15);

  Tensor<double> two({2, 4, 4});
  for (std::size_t k = 0; k < 16; ++k) {
    two[k] = 0.2;
    two[16 + k] = 0.6;
  }
  const auto avg = simulate_pan(MSImage::from(two), {0.5, 0.5}, 0);
  for (double v : avg.tensor().data()) EXPECT_NEAR(v, 0.4, 1e-15);
}

TEST(SimulatePan, BlurReducesTotalVariation) {
  Rng rng(1);
  const auto hrms = MSImage::from(random_tensor({1, 16, 16}, rng, 0, 1));
  const auto sharp = simulate_pan(hrms, {1}, 0);
  const auto blurred = simulate_pan(hrms, {1}, 1.0);
  const auto tv = [](const PanImage& p) {
    return total_variation(MSImage::from(p.tensor().reshaped({1, p.height(), p.width()})));
  };
  EXPECT_LT(tv(blurred), tv(sharp));
}

TEST(SimulatePan, RejectsNonSimplexWeights) {
  const auto hrms = MSImage::from(Tensor<double>({2, 4, 4}, 0.5));
  EXPECT_EQ(error_code([&] { simulate_pan(hrms, {0.7, 0.7}, 0); }), Errc::kDomain);
  EXPECT_EQ(error_code([&] { simulate_pan(hrms, {1.5, -0.5}, 0); }), Errc::kDomain);
  EXPECT_EQ(error_code([&] { simulate_pan(hrms, {1.0}, 0); }), Errc::kDomain);
}

TEST(WaldDegrade, ConstantAndIdentity) {
  const auto flat = MSImage::from(Tensor<double>({2, 16, 16}, 0.45));
  const auto low = wald_degrade(flat, 4);
  EXPECT_EQ(low.tensor().shape(), (Shape{2, 4, 4}));
  for (double v : low.tensor().data()) EXPECT_NEAR(v, 0.45, 1e-15);

  Rng rng(2);
  const auto img = MSImage::from(random_tensor({2, 8, 8}, rng, 0, 1));
  EXPECT_LE(max_abs_diff(wald_degrade(img, 1).tensor(), img.tensor()), 1e-15);
}

TEST(WaldDegrade, RampMatchesStretchedKernel) {
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = double(i) / 15;
  Tensor<double> img({1, 4, 16});
  for (std::size_t row = 0; row < 4; ++row)
    for (std::size_t j = 0; j < 16; ++j) img(0, row, j) = ramp[j];
  const auto degraded = wald_degrade(MSImage::from(img), 4);
  const auto& low = degraded.tensor();
  const auto ref = stretched_downsample(ramp, 4);
  ASSERT_EQ(low.shape(), (Shape{1, 1, 4}));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(low(0, 0, j), ref[j], 1e-12);
}

TEST(WaldDegrade, IsLinearInsideTheUnitRange) {
  Rng rng(3);
  const auto x = random_tensor({2, 16, 16}, rng, 0.25, 0.75);
  const auto y = random_tensor({2, 16, 16}, rng, 0.25, 0.75);
  Tensor<double> mix(x.shape());
  for (std::size_t k = 0; k < mix.size(); ++k) mix[k] = 0.3 * x[k] + 0.7 * y[k];
  const auto dx = wald_degrade(MSImage::from(x), 4).tensor();
  const auto dy = wald_degrade(MSImage::from(y), 4).tensor();
  const auto dm = wald_degrade(MSImage::from(mix), 4).tensor();
  for (std::size_t k = 0; k < dm.size(); ++k) EXPECT_NEAR(dm[k], 0.3 * dx[k] + 0.7 * dy[k], 1e-12);
}

TEST(WaldDegrade, RejectsIndivisibleSize) {
  EXPECT_EQ(error_code([] { wald_degrade(MSImage::from(Tensor<double>({1, 10, 12})), 4); }),
            Errc::kShape);
}

TEST(Triplet, ShapeRelations) {
  const auto cfg = small_config();
  for (std::size_t i = 0; i < 3; ++i) {
    const auto t = make_triplet(cfg, i);
    EXPECT_EQ(t.id, sample_id(i));
    EXPECT_EQ(t.hrms.tensor().shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(t.lrms.tensor().shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(t.pan.tensor().shape(), (Shape{32, 32}));
  }
  EXPECT_EQ(sample_id(12), "sample_0012");
}

TEST(Split, EightyTwentyOfTen) {
  const auto cfg = small_config();
  const auto test = test_indices(cfg);
  EXPECT_EQ(test.size(), 2u);
  EXPECT_TRUE(std::is_sorted(test.begin(), test.end()));
  EXPECT_EQ(test_indices(cfg), test);
}

TEST(Corpus, ManifestSplitFilesAndReload) {
  TempDir dir;
  const auto cfg = small_config();
  const auto manifest = build_corpus(cfg, dir.path());
  EXPECT_EQ(manifest["split"]["train"].size(), 8u);
  EXPECT_EQ(manifest["split"]["test"].size(), 2u);
  EXPECT_EQ(manifest["seed"], 5);
  ASSERT_EQ(manifest["samples"].size(), 10u);
  for (const auto& s : manifest["samples"]) {
    EXPECT_EQ(load_tensor(dir.path() / s["hrms"].get<std::string>()).shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(load_tensor(dir.path() / s["lrms"].get<std::string>()).shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(load_tensor(dir.path() / s["pan"].get<std::string>()).shape(), (Shape{32, 32}));
    EXPECT_FALSE(s["motif_stamps"].empty());
  }
  const auto corpus = load_corpus(dir.path());
  EXPECT_EQ(corpus.train.size(), 8u);
  EXPECT_EQ(corpus.test.size(), 2u);
  EXPECT_EQ(synth_config_to_json(corpus.config), synth_config_to_json(cfg));
  // Stored as 32-bit floats.
  const auto fresh = make_triplet(cfg, 0);
  const auto& stored = corpus.train.front().id == fresh.id ? corpus.train.front() : corpus.test.front();
  if (stored.id == fresh.id)
    EXPECT_LE(max_abs_diff(stored.hrms.tensor(), fresh.hrms.tensor()), 1e-7);
}

TEST(Corpus, RebuildIsByteIdentical) {
  TempDir a, b;
  const auto cfg = small_config();
  build_corpus(cfg, a.path());
  build_corpus(cfg, b.path());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    EXPECT_EQ(file_bytes(entry.path()), file_bytes(b.path() / rel)) << rel;
  }
}

TEST(Corpus, MissingDirectoryIsAnIoError) {
  TempDir dir;
  EXPECT_EQ(error_code([&] { load_corpus(dir / "nope"); }), Errc::kIo);
}

TEST(Corpus, ShapeMismatchOnLoadIsReported) {
  TempDir dir;
  const auto cfg = small_config();
  const auto manifest = build_corpus(cfg, dir.path());
  const auto first = manifest["samples"][0]["lrms"].get<std::string>();
  save_tensor(Tensor<double>({3, 4, 4}), dir.path() / first);
  EXPECT_TRUE(error_code([&] { load_corpus(dir.path()); }));
}
