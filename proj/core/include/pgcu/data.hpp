#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgcu/image.hpp"

// Synthetic pansharpening corpus built with the Wald protocol: a synthetic
// HRMS is the ground truth, LRMS is its anti-aliased bicubic downsample,
// PAN is a blurred spectral mix at full resolution.
namespace pgcu {

struct SynthConfig {
  std::size_t channels = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t scale = 4;
  std::size_t num_samples = 80;
  std::uint64_t seed = 0;
  std::size_t motif_count = 4;
  std::vector<double> spectral_weights;  // empty means uniform 1/C
  double blur_sigma = 0.5;
  double test_fraction = 0.2;

  // Uniform weights when none were given.
  std::vector<double> pan_weights() const;

  // Throws Errc::kConfig naming the offending field.
  void validate() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j, const std::string& path = "data");

struct MotifStamp {
  std::size_t motif;
  std::size_t row;  // top-left corner
  std::size_t col;
  std::size_t size;
};

struct SynthSample {
  MSImage hrms;
  std::vector<MotifStamp> stamps;
};

// Smooth low-frequency background plus square motifs, each stamped at
// least twice with corners more than H/2 apart. Deterministic in
// (cfg.seed, index).
SynthSample synth_hrms(const SynthConfig& cfg, std::size_t index);

// Weighted channel sum, then a Gaussian blur (sigma 0 disables it).
// Throws Errc::kDomain if the weights are not a simplex of length C.
PanImage simulate_pan(const MSImage& hrms, const std::vector<double>& weights,
                      double blur_sigma);

// Anti-aliased bicubic downsample by r. Throws Errc::kShape if H or W is
// not divisible by r.
MSImage wald_degrade(const MSImage& hrms, std::size_t r);

// Total variation (sum of absolute neighbour differences) over all channels.
double total_variation(const MSImage& img);

struct DatasetTriplet {
  std::string id;
  MSImage hrms;
  MSImage lrms;
  PanImage pan;
};

DatasetTriplet make_triplet(const SynthConfig& cfg, std::size_t index);

std::string sample_id(std::size_t index);

// Indices of the test split: sorted by a seeded hash, the first
// round(test_fraction * N) go to test. Returned in ascending order.
std::vector<std::size_t> test_indices(const SynthConfig& cfg);

// Writes <id>/{hrms,lrms,pan}.pft and manifest.json; returns the manifest.
nlohmann::json build_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir);

struct Corpus {
  SynthConfig config;
  std::vector<DatasetTriplet> train;
  std::vector<DatasetTriplet> test;
};

// Reads a directory written by build_corpus and checks every shape.
Corpus load_corpus(const std::filesystem::path& dir);

DatasetTriplet load_triplet(const std::filesystem::path& sample_dir, const std::string& id);

}  // namespace pgcu
