#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgcu/image.hpp"
#include "pgcu/tensor.hpp"

// Reference-based quality metrics. Inputs are [C][H][W] tensors; the
// reference argument comes first where the metric is asymmetric.
namespace pgcu {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kSamEps = 1e-12;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Peak 1, one global MSE; kPsnrCap when the images are identical.
double psnr(const Tensor<double>& x, const Tensor<double>& y);

// Mean per-pixel spectral angle in radians. Pixels where either spectrum
// is all zero contribute 0.
double sam(const Tensor<double>& x, const Tensor<double>& y);

// (100 / r) * sqrt(mean_c (rmse_c / mean(ref_c))^2). Throws
// Errc::kDegenerateReference if a reference channel has zero mean.
double ergas(const Tensor<double>& ref, const Tensor<double>& y, std::size_t scale);

// Gaussian-window SSIM (11x11, sigma 1.5, range 1) over valid positions,
// averaged over channels. Throws Errc::kShape if H or W is below 11.
double ssim(const Tensor<double>& x, const Tensor<double>& y);

// Pearson correlation of Laplacian-filtered channels, averaged over
// channels. Borders are handled by edge replication so a constant image
// filters to exactly zero; a zero-variance filtered channel contributes 0.
double scc(const Tensor<double>& x, const Tensor<double>& y);

// 11x11 normalised Gaussian window, row-major.
std::vector<double> ssim_window();

struct MetricsReport {
  double sam = 0;
  double ergas = 0;
  double ssim = 1;
  double scc = 1;
  double psnr = kPsnrCap;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport evaluate_all(const MSImage& ref, const MSImage& y, std::size_t scale);
MetricsReport evaluate_all(const Tensor<double>& ref, const Tensor<double>& y, std::size_t scale);

// Field-wise arithmetic mean. Empty input gives a default report.
MetricsReport mean_report(std::span<const MetricsReport> reports);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

const std::vector<std::string>& metric_names();
double metric_value(const MetricsReport& r, const std::string& name);
// true for psnr/ssim/scc.
bool higher_is_better(const std::string& name);

// Fixed-width text table, one row per entry, columns SAM ERGAS SSIM SCC
// PSNR with arrows. The best value in each column is marked with '*'.
std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                         const std::string& label_header = "method");

}  // namespace pgcu
