#include "pgcu/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "pgcu/errors.hpp"
#include "pgcu/io.hpp"
#include "pgcu/random.hpp"

namespace pgcu {
namespace {

void check_simplex(std::span<const double> p, const char* what) {
  double sum = 0;
  for (double v : p) {
    require(std::isfinite(v) && v >= -kSimplexTolerance, Errc::kDomain,
            std::string(what) + " has a negative or non-finite entry");
    sum += v;
  }
  require(std::abs(sum - 1) <= kSimplexTolerance, Errc::kDomain,
          std::string(what) + " does not sum to 1 (sum " + std::to_string(sum) + ")");
}

double kl_to_mid(std::span<const double> p, std::span<const double> q) {
  double acc = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0) continue;
    acc += p[k] * std::log(p[k] / (0.5 * (p[k] + q[k])));
  }
  return acc;
}

double js_unchecked(std::span<const double> p, std::span<const double> q) {
  return 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
}

std::span<const double> pixel(const Tensor<double>& probs, std::size_t channel, std::size_t idx) {
  const std::size_t hw = probs.dim(1) * probs.dim(2), n = probs.dim(3);
  return {probs.raw() + (channel * hw + idx) * n, n};
}

void check_field(const ProbabilityTensor<double>& field, std::size_t channel) {
  require(field.probs.rank() == 4, Errc::kShape, "probability field must be [C][H][W][n]");
  require(channel < field.probs.dim(0), Errc::kShape,
          "channel " + std::to_string(channel) + " out of range");
  const std::size_t hw = field.probs.dim(1) * field.probs.dim(2);
  for (std::size_t p = 0; p < hw; ++p) check_simplex(pixel(field.probs, channel, p), "pixel distribution");
}

}  // namespace

double js_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), Errc::kDomain,
          "js_divergence: distributions must have equal, non-zero length");
  check_simplex(p, "js_divergence: p");
  check_simplex(q, "js_divergence: q");
  return js_unchecked(p, q);
}

double normalized_entropy(std::span<const double> p) {
  if (p.size() <= 1) return 0;
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return std::clamp(h / std::log(static_cast<double>(p.size())), 0.0, 1.0);
}

Tensor<double> entropy_map(const ProbabilityTensor<double>& field, std::size_t channel) {
  check_field(field, channel);
  const std::size_t h = field.probs.dim(1), w = field.probs.dim(2);
  Tensor<double> out({h, w});
  for (std::size_t p = 0; p < h * w; ++p) out[p] = normalized_entropy(pixel(field.probs, channel, p));
  return out;
}

std::vector<std::size_t> ClusterResult::sizes() const {
  std::vector<std::size_t> s(centroids.size(), 0);
  for (auto l : labels) ++s[l];
  return s;
}

ClusterResult cluster_pixels(const ProbabilityTensor<double>& field, std::size_t channel,
                             std::size_t k, std::uint64_t seed) {
  check_field(field, channel);
  require(k >= 1, Errc::kDomain, "cluster count must be >= 1");
  const auto& probs = field.probs;
  const std::size_t hw = probs.dim(1) * probs.dim(2), n = probs.dim(3);

  ClusterResult res;
  res.height = probs.dim(1);
  res.width = probs.dim(2);

  // Initial centroids: first K distinct distributions in a seeded order.
  std::vector<std::size_t> order(hw);
  for (std::size_t i = 0; i < hw; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order.begin(), order.end(), rng);
  for (std::size_t idx : order) {
    if (res.centroids.size() == k) break;
    const auto px = pixel(probs, channel, idx);
    const bool seen = std::any_of(res.centroids.begin(), res.centroids.end(), [&](const auto& c) {
      return std::equal(c.begin(), c.end(), px.begin());
    });
    if (!seen) res.centroids.emplace_back(px.begin(), px.end());
  }
  require(res.centroids.size() == k, Errc::kDomain,
          "channel " + std::to_string(channel) + " has fewer than " + std::to_string(k) +
              " distinct pixel distributions");

  std::vector<double> dist(hw);
  auto assign = [&] {
    std::vector<std::size_t> labels(hw);
    double objective = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      const auto px = pixel(probs, channel, p);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = js_unchecked(px, res.centroids[c]);
        if (d < best) {
          best = d;
          labels[p] = c;
        }
      }
      dist[p] = best;
      objective += best;
    }
    res.objective.push_back(objective);
    return labels;
  };

  res.labels = assign();
  while (res.iterations < kMaxClusterIterations) {
    ++res.iterations;
    std::vector<std::vector<double>> sums(k, std::vector<double>(n, 0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      const auto px = pixel(probs, channel, p);
      auto& s = sums[res.labels[p]];
      for (std::size_t j = 0; j < n; ++j) s[j] += px[j];
      ++counts[res.labels[p]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(
            std::max_element(dist.begin(), dist.end()) - dist.begin());
        const auto px = pixel(probs, channel, far);
        res.centroids[c].assign(px.begin(), px.end());
        dist[far] = 0;
        continue;
      }
      for (std::size_t j = 0; j < n; ++j)
        res.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
    auto labels = assign();
    const bool stable = labels == res.labels;
    res.labels = std::move(labels);
    if (stable) break;
  }
  return res;
}

const std::array<std::array<std::uint8_t, 3>, 12>& label_palette() {
  static constexpr std::array<std::array<std::uint8_t, 3>, 12> palette{{
      {230, 25, 75},
      {60, 180, 75},
      {255, 225, 25},
      {0, 130, 200},
      {245, 130, 48},
      {145, 30, 180},
      {70, 240, 240},
      {240, 50, 230},
      {210, 245, 60},
      {250, 190, 212},
      {0, 128, 128},
      {170, 110, 40},
  }};
  return palette;
}

nlohmann::json render_analysis(const PixelDistributionField& field,
                               const std::filesystem::path& out_dir, std::size_t k,
                               std::uint64_t seed) {
  const auto& probs = field.p.probs;
  require(probs.rank() == 4, Errc::kShape, "probability field must be [C][H][W][n]");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, Errc::kIo, "cannot create " + out_dir.string() + ": " + ec.message());

  const std::size_t channels = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const auto& palette = label_palette();
  nlohmann::json per_channel = nlohmann::json::array();
  for (std::size_t c = 0; c < channels; ++c) {
    const ClusterResult clusters = cluster_pixels(field.p, c, k, seed);
    std::vector<std::uint8_t> rgb(h * w * 3);
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t b = 0; b < 3; ++b) rgb[p * 3 + b] = palette[clusters.labels[p] % 12][b];
    const std::string stem = "channel_" + std::to_string(c);
    write_png(out_dir / (stem + "_clusters.png"), w, h, 3, rgb);

    const Tensor<double> entropy = entropy_map(field.p, c);
    std::vector<std::uint8_t> gray(h * w);
    double mean_entropy = 0;
    for (std::size_t p = 0; p < h * w; ++p) {
      gray[p] = quantize_u8(entropy[p]);
      mean_entropy += entropy[p];
    }
    write_png(out_dir / (stem + "_entropy.png"), w, h, 1, gray);

    per_channel.push_back({{"channel", c},
                           {"mean_entropy", mean_entropy / static_cast<double>(h * w)},
                           {"cluster_sizes", clusters.sizes()},
                           {"objective", clusters.objective.back()},
                           {"iterations", clusters.iterations}});
  }
  const nlohmann::json summary{{"checkpoint", field.checkpoint},
                               {"input", field.input},
                               {"k", k},
                               {"seed", seed},
                               {"height", h},
                               {"width", w},
                               {"num_values", probs.dim(3)},
                               {"channels", per_channel}};
  std::ofstream os(out_dir / "summary.json", std::ios::binary | std::ios::trunc);
  require(bool(os), Errc::kIo, "cannot write " + (out_dir / "summary.json").string());
  os << summary.dump(2) << '\n';
  return summary;
}

}  // namespace pgcu
