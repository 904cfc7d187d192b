#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "pgcu/tensor.hpp"

// Separable resampling with half-pixel centre alignment and edge
// replication. Shared by the interpolating upsamplers and the Wald-protocol
// degradation.
namespace pgcu {

inline constexpr double kCubicA = -0.5;

// Keys cubic convolution kernel.
double cubic_kernel(double x, double a = kCubicA);
double tent_kernel(double x);

// taps[o] lists (input index, weight) pairs for output sample o.
using Taps = std::vector<std::vector<std::pair<std::size_t, double>>>;

enum class InterpKernel { kLinear, kCubic };

// out = in * r; source coordinate (o + 0.5) / r - 0.5.
Taps upsample_taps(std::size_t in, std::size_t r, InterpKernel kernel);

// out = in / r; cubic kernel stretched by r (support 2r on each side),
// weights renormalised to sum to one. Source centre (o + 0.5) * r - 0.5.
Taps downsample_taps(std::size_t in, std::size_t r);

// x [C][H][W] -> [C][row_taps.size()][col_taps.size()].
template <typename T>
Tensor<T> resample_separable(const Tensor<T>& x, const Taps& row_taps, const Taps& col_taps);

}  // namespace pgcu
