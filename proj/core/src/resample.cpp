#include "pgcu/resample.hpp"

#include <cmath>

namespace pgcu {
namespace {

std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<std::ptrdiff_t>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace

double cubic_kernel(double x, double a) {
  const double t = std::abs(x);
  if (t < 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

double tent_kernel(double x) {
  const double t = std::abs(x);
  return t < 1.0 ? 1.0 - t : 0.0;
}

Taps upsample_taps(std::size_t in, std::size_t r, InterpKernel kernel) {
  require(in >= 1 && r >= 1, Errc::kShape, "upsample_taps: sizes must be >= 1");
  Taps taps(in * r);
  const std::ptrdiff_t lo = kernel == InterpKernel::kCubic ? -1 : 0;
  const std::ptrdiff_t hi = kernel == InterpKernel::kCubic ? 2 : 1;
  for (std::size_t o = 0; o < in * r; ++o) {
    const double x = (static_cast<double>(o) + 0.5) / static_cast<double>(r) - 0.5;
    const auto base = static_cast<std::ptrdiff_t>(std::floor(x));
    for (std::ptrdiff_t i = base + lo; i <= base + hi; ++i) {
      const double d = x - static_cast<double>(i);
      const double w = kernel == InterpKernel::kCubic ? cubic_kernel(d) : tent_kernel(d);
      if (w != 0.0) taps[o].emplace_back(clamp_index(i, in), w);
    }
  }
  return taps;
}

Taps downsample_taps(std::size_t in, std::size_t r) {
  require(r >= 1 && in % r == 0, Errc::kShape,
          "downsample_taps: size " + std::to_string(in) + " not divisible by " +
              std::to_string(r));
  const std::size_t out = in / r;
  const double scale = static_cast<double>(r);
  Taps taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double x = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const auto first = static_cast<std::ptrdiff_t>(std::ceil(x - 2.0 * scale));
    const auto last = static_cast<std::ptrdiff_t>(std::floor(x + 2.0 * scale));
    double total = 0.0;
    for (std::ptrdiff_t i = first; i <= last; ++i) {
      const double w = cubic_kernel((static_cast<double>(i) - x) / scale);
      if (w == 0.0) continue;
      taps[o].emplace_back(clamp_index(i, in), w);
      total += w;
    }
    for (auto& tw : taps[o]) tw.second /= total;
  }
  return taps;
}

template <typename T>
Tensor<T> resample_separable(const Tensor<T>& x, const Taps& row_taps, const Taps& col_taps) {
  require(x.rank() == 3, Errc::kShape, "resample expects [C][H][W]");
  const std::size_t C = x.dim(0), H = x.dim(1);
  const std::size_t oh = row_taps.size(), ow = col_taps.size();
  Tensor<T> tmp({C, H, ow});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (const auto& [idx, w] : col_taps[j]) acc += w * static_cast<double>(x(c, i, idx));
        tmp(c, i, j) = static_cast<T>(acc);
      }
  Tensor<T> out({C, oh, ow});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (const auto& [idx, w] : row_taps[i]) acc += w * static_cast<double>(tmp(c, idx, j));
        out(c, i, j) = static_cast<T>(acc);
      }
  return out;
}

template Tensor<float> resample_separable(const Tensor<float>&, const Taps&, const Taps&);
template Tensor<double> resample_separable(const Tensor<double>&, const Taps&, const Taps&);

}  // namespace pgcu
