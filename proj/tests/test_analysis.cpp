#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <numbers>
#include <set>

#include "pgcu/analysis.hpp"
#include "support/expect_error.hpp"
#include "support/png_reader.hpp"
#include "support/temp_dir.hpp"

using namespace pgcu;
using testing_support::error_code;

namespace {

std::vector<double> random_simplex(std::size_t n, Rng& rng, bool sparse = false) {
  std::vector<double> p(n);
  double sum = 0;
  for (auto& v : p) {
    v = (sparse && rng.uniform() < 0.3) ? 0.0 : -std::log(rng.uniform(1e-12, 1.0));
    sum += v;
  }
  if (sum == 0) p[0] = sum = 1;
  for (auto& v : p) v /= sum;
  return p;
}

double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0) kl += p[k] * std::log(p[k] / q[k]);
  return kl;
}

double js_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) m[k] = 0.5 * (p[k] + q[k]);
  return 0.5 * kl_oracle(p, m) + 0.5 * kl_oracle(q, m);
}

// Channel-major field [C][H][W][n] filled from a per-pixel generator.
template <typename Fn>
ProbabilityTensor<double> make_field(std::size_t c, std::size_t h, std::size_t w, std::size_t n,
                                     Fn&& at) {
  ProbabilityTensor<double> f{Tensor<double>({c, h, w, n})};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::vector<double> p = at(ch, i, j);
        for (std::size_t k = 0; k < n; ++k) f.probs(ch, i, j, k) = p[k];
      }
  return f;
}

std::vector<double> one_hot(std::size_t n, std::size_t k) {
  std::vector<double> p(n, 0.0);
  p[k] = 1;
  return p;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(JsDivergence, IdenticalIsZeroDisjointIsLn2) {
  Rng rng(1);
  const auto p = random_simplex(6, rng);
  EXPECT_NEAR(js_divergence(p, p), 0.0, 1e-15);
  EXPECT_NEAR(js_divergence(std::vector<double>{1, 0}, std::vector<double>{0, 1}),
              std::numbers::ln2, 1e-15);
}

TEST(JsDivergence, SymmetricBoundedAndMatchesOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 7;
    const auto p = random_simplex(n, rng, trial % 2 == 0);
    const auto q = random_simplex(n, rng, trial % 3 == 0);
    const double pq = js_divergence(p, q);
    EXPECT_NEAR(pq, js_divergence(q, p), 1e-12);
    EXPECT_GE(pq, 0.0);
    EXPECT_LE(pq, std::numbers::ln2 + 1e-12);
    EXPECT_NEAR(pq, js_oracle(p, q), 1e-12);
  }
}

TEST(JsDivergence, RejectsNonSimplexInputs) {
  const std::vector<double> ok{0.5, 0.5};
  EXPECT_EQ(error_code([&] { js_divergence(ok, std::vector<double>{0.5, 0.6}); }), Errc::kDomain);
  EXPECT_EQ(error_code([&] { js_divergence(ok, std::vector<double>{1.5, -0.5}); }), Errc::kDomain);
  EXPECT_EQ(error_code([&] { js_divergence(ok, std::vector<double>{1.0}); }), Errc::kDomain);
}

TEST(Entropy, UniformOneHotAndHalf) {
  EXPECT_NEAR(normalized_entropy(std::vector<double>(5, 0.2)), 1.0, 1e-12);
  EXPECT_EQ(normalized_entropy(one_hot(5, 3)), 0.0);
  EXPECT_NEAR(normalized_entropy(std::vector<double>{0.5, 0.5, 0, 0}), 0.5, 1e-15);
  EXPECT_EQ(normalized_entropy(std::vector<double>{1.0}), 0.0);
}

TEST(Entropy, MapIsPerChannelAndInUnitRange) {
  Rng rng(3);
  const auto field = make_field(2, 3, 4, 6, [&](std::size_t c, std::size_t i, std::size_t j) {
    if (c == 0) return std::vector<double>(6, 1.0 / 6);
    if ((i + j) % 2 == 0) return one_hot(6, i);
    return random_simplex(6, rng);
  });
  const auto uniform = entropy_map(field, 0);
  EXPECT_EQ(uniform.shape(), (Shape{3, 4}));
  for (double v : uniform.data()) EXPECT_NEAR(v, 1.0, 1e-9);
  const auto mixed = entropy_map(field, 1);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      if ((i + j) % 2 == 0) EXPECT_EQ(mixed(i, j), 0.0);
      EXPECT_GE(mixed(i, j), 0.0);
      EXPECT_LE(mixed(i, j), 1.0);
    }
}

TEST(Cluster, RecoversPlantedOneHotTiling) {
  // 4x4 blocks of K=3 one-hot distributions in a 12x12 map, n=5.
  const std::size_t k = 3;
  auto tile = [](std::size_t i, std::size_t j) { return (i / 4 + 2 * (j / 4)) % 3; };
  const auto field = make_field(1, 12, 12, 5, [&](std::size_t, std::size_t i, std::size_t j) {
    return one_hot(5, tile(i, j) + 1);
  });
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = cluster_pixels(field, 0, k, seed);
    // Same tile label <=> same cluster label.
    std::vector<std::set<std::size_t>> by_tile(k);
    for (std::size_t p = 0; p < 144; ++p) by_tile[tile(p / 12, p % 12)].insert(r.labels[p]);
    std::set<std::size_t> used;
    for (const auto& s : by_tile) {
      ASSERT_EQ(s.size(), 1u) << "seed " << seed;
      used.insert(*s.begin());
    }
    EXPECT_EQ(used.size(), k) << "seed " << seed;
    EXPECT_NEAR(r.objective.back(), 0.0, 1e-15);
  }
}

TEST(Cluster, SingleClusterIsTheFieldMean) {
  Rng rng(4);
  const auto field = make_field(1, 4, 4, 3, [&](auto...) { return random_simplex(3, rng); });
  const auto r = cluster_pixels(field, 0, 1, 0);
  for (auto l : r.labels) EXPECT_EQ(l, 0u);
  ASSERT_EQ(r.centroids.size(), 1u);
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0;
    for (std::size_t p = 0; p < 16; ++p) mean += field.probs[p * 3 + k];
    EXPECT_NEAR(r.centroids[0][k], mean / 16, 1e-15);
  }
}

TEST(Cluster, ObjectiveNonIncreasingAndDeterministic) {
  Rng rng(5);
  const auto field = make_field(2, 10, 10, 8, [&](auto...) { return random_simplex(8, rng, true); });
  for (std::size_t c = 0; c < 2; ++c) {
    const auto r = cluster_pixels(field, c, 4, 7);
    for (std::size_t t = 1; t < r.objective.size(); ++t)
      EXPECT_LE(r.objective[t], r.objective[t - 1] + 1e-12) << "iteration " << t;
    EXPECT_LE(r.iterations, kMaxClusterIterations);
    const auto sizes = r.sizes();
    EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), 100u);
    for (const auto& centroid : r.centroids)
      EXPECT_NEAR(std::accumulate(centroid.begin(), centroid.end(), 0.0), 1.0, 1e-12);
    const auto again = cluster_pixels(field, c, 4, 7);
    EXPECT_EQ(again.labels, r.labels);
    EXPECT_EQ(again.objective, r.objective);
  }
}

TEST(Cluster, TooFewDistinctDistributions) {
  const auto field = make_field(1, 4, 4, 3, [](std::size_t, std::size_t i, std::size_t) {
    return one_hot(3, i % 2);
  });
  EXPECT_EQ(error_code([&] { cluster_pixels(field, 0, 3, 0); }), Errc::kDomain);
  EXPECT_NO_THROW(cluster_pixels(field, 0, 2, 0));
}

TEST(Render, WritesPngsAndSummary) {
  TempDir dir;
  Rng rng(6);
  PixelDistributionField field{make_field(2, 6, 5, 4, [&](auto...) { return random_simplex(4, rng); }),
                               "ckpt", "sample_0000"};
  const auto summary = render_analysis(field, dir.path(), 3, 1);
  EXPECT_EQ(summary["k"], 3);
  ASSERT_EQ(summary["channels"].size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto& ch = summary["channels"][c];
    std::size_t total = 0;
    for (const auto& s : ch["cluster_sizes"]) total += s.get<std::size_t>();
    EXPECT_EQ(total, 30u);

    const auto stem = "channel_" + std::to_string(c);
    const auto labels = testing_png::read(dir / (stem + "_clusters.png"));
    EXPECT_EQ(labels.width, 5u);
    EXPECT_EQ(labels.height, 6u);
    const auto clusters = cluster_pixels(field.p, c, 3, 1);
    for (std::size_t p = 0; p < 30; ++p)
      for (std::size_t b = 0; b < 3; ++b)
        EXPECT_EQ(labels.pixels[p * labels.channels + b], label_palette()[clusters.labels[p]][b]);

    const auto gray = testing_png::read(dir / (stem + "_entropy.png"));
    const auto ent = entropy_map(field.p, c);
    double mean = 0;
    for (std::size_t p = 0; p < 30; ++p) {
      EXPECT_NEAR(gray.pixels[p * gray.channels], 255 * ent[p], 0.5 + 1e-9);
      mean += ent[p];
    }
    EXPECT_NEAR(ch["mean_entropy"].get<double>(), mean / 30, 1e-12);
  }
  EXPECT_EQ(nlohmann::json::parse(file_bytes(dir / "summary.json")), summary);
}

TEST(Render, FileBytesAreDeterministic) {
  TempDir a, b;
  Rng rng(7);
  PixelDistributionField field{make_field(1, 8, 8, 5, [&](auto...) { return random_simplex(5, rng); }),
                               "", ""};
  render_analysis(field, a.path(), 4, 2);
  render_analysis(field, b.path(), 4, 2);
  for (auto name : {"channel_0_clusters.png", "channel_0_entropy.png", "summary.json"})
    EXPECT_EQ(file_bytes(a / name), file_bytes(b / name)) << name;
}

TEST(Render, PaletteColoursAreDistinct) {
  std::set<std::array<std::uint8_t, 3>> seen(label_palette().begin(), label_palette().end());
  EXPECT_EQ(seen.size(), 12u);
}
