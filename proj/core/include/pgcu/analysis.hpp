#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgcu/pgcu.hpp"

// Diagnostics over the per-pixel distributions of a PGCU forward pass:
// K-means under the Jensen-Shannon divergence and normalised entropy maps.
namespace pgcu {

inline constexpr std::size_t kDefaultClusters = 6;
inline constexpr std::size_t kMaxClusterIterations = 100;
inline constexpr double kSimplexTolerance = 1e-5;

struct PixelDistributionField {
  ProbabilityTensor<double> p;  // [C][H][W][n]
  std::string checkpoint;       // provenance, free-form
  std::string input;
};

// Natural-log JS divergence, 0 log 0 = 0. Throws Errc::kDomain unless both
// arguments are simplices of equal length.
double js_divergence(std::span<const double> p, std::span<const double> q);

// -sum p ln p / ln n, in [0, 1]. n = 1 gives 0.
double normalized_entropy(std::span<const double> p);

// [H][W] normalised entropy of channel c.
Tensor<double> entropy_map(const ProbabilityTensor<double>& field, std::size_t channel);

struct ClusterResult {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> labels;              // row-major [H][W]
  std::vector<std::vector<double>> centroids;   // K simplices
  std::vector<double> objective;                // sum of JS to centroid, per assignment
  std::size_t iterations = 0;

  std::vector<std::size_t> sizes() const;
};

// Lloyd iteration: assign to the nearest centroid under JS, move centroids
// to the member mean. Initial centroids are K distinct pixels drawn with
// `seed`; an empty cluster is reseeded from the pixel farthest from its
// centroid. Stops when labels are stable or after 100 iterations. Throws
// Errc::kDomain if the channel has fewer than K distinct distributions.
ClusterResult cluster_pixels(const ProbabilityTensor<double>& field, std::size_t channel,
                             std::size_t k, std::uint64_t seed);

// Fixed label colours; label l uses entry l % 12.
const std::array<std::array<std::uint8_t, 3>, 12>& label_palette();

// Per channel c: channel_<c>_clusters.png (palette colours) and
// channel_<c>_entropy.png (grayscale), plus summary.json. Returns the
// summary.
nlohmann::json render_analysis(const PixelDistributionField& field,
                               const std::filesystem::path& out_dir, std::size_t k,
                               std::uint64_t seed);

}  // namespace pgcu
