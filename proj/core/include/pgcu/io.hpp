#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pgcu/image.hpp"
#include "pgcu/tensor.hpp"

namespace pgcu {

// PFT1 layout:
//   "PFT1" | rank:u8 | dims:u32le[rank] | payload:f32le[prod(dims)]
// Payload is row-major. Rank is limited to 8.
inline constexpr std::size_t kMaxTensorRank = 8;

void save_tensor(const Tensor<float>& t, const std::filesystem::path& path);

// Narrows to float32 before writing.
void save_tensor(const Tensor<double>& t, const std::filesystem::path& path);

Tensor<float> load_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t);
Tensor<float> decode_tensor(std::span<const std::uint8_t> bytes);

// 8-bit PNG; each value v in [0,1] maps to floor(v * 255 + 0.5).
// One channel gives grayscale, three give RGB.
void export_png(const MSImage& img, const std::filesystem::path& path,
                std::span<const std::size_t> channel_order);
void export_png(const PanImage& img, const std::filesystem::path& path);

std::uint8_t quantize_u8(double v);

// Raw writer used by the exporters and the analysis renderer.
// `pixels` is interleaved, row-major, channels in {1, 3}.
void write_png(const std::filesystem::path& path, std::size_t width,
               std::size_t height, std::size_t channels,
               std::span<const std::uint8_t> pixels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace pgcu
