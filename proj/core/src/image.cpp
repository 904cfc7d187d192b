#include "pgcu/image.hpp"

#include <algorithm>
#include <cmath>

namespace pgcu {
namespace {

void validate_range(Tensor<double>& data, bool clamp, const char* what) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    double& v = data[i];
    if (std::isfinite(v) && v >= 0.0 && v <= 1.0) continue;
    if (!clamp) {
      fail(Errc::kDomain, std::string(what) + ": element " + std::to_string(i) +
                              " = " + std::to_string(v) +
                              " is outside [0,1] (pass clamp=true to clamp)");
    }
    // NaN has no meaningful clamp target; it maps to 0.
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  }
}

}  // namespace

MSImage MSImage::from_tensor(Tensor<double> data, bool clamp) {
  require(data.rank() == 3, Errc::kShape,
          "MSImage expects rank 3 [C][H][W], got " + shape_string(data.shape()));
  require(data.dim(0) >= 1 && data.dim(1) >= 1 && data.dim(2) >= 1,
          Errc::kShape, "MSImage dims must be >= 1");
  validate_range(data, clamp, "MSImage");
  return MSImage(std::move(data));
}

PanImage PanImage::from_tensor(Tensor<double> data, bool clamp) {
  require(data.rank() == 2, Errc::kShape,
          "PanImage expects rank 2 [H][W], got " + shape_string(data.shape()));
  require(data.dim(0) >= 1 && data.dim(1) >= 1, Errc::kShape,
          "PanImage dims must be >= 1");
  validate_range(data, clamp, "PanImage");
  return PanImage(std::move(data));
}

}  // namespace pgcu
