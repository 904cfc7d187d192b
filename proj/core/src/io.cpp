#include "pgcu/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>

namespace pgcu {
namespace {

constexpr char kMagic[4] = {'P', 'F', 'T', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_bytes(const std::filesystem::path& path,
                 const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::kIo, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::kIo, "write failed: " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t) {
  require(t.rank() >= 1 && t.rank() <= kMaxTensorRank, Errc::kShape,
          "PFT1 rank must be in [1, 8], got " + std::to_string(t.rank()));
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    require(d >= 1, Errc::kShape, "PFT1 dims must be >= 1");
    require(d <= std::numeric_limits<std::uint32_t>::max(), Errc::kShape,
            "PFT1 dim overflows u32: " + std::to_string(d));
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor<float> decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(Errc::kBadMagic, "not a PFT1 tensor (bad magic)");
  const std::size_t rank = bytes[4];
  require(rank >= 1 && rank <= kMaxTensorRank, Errc::kDimMismatch,
          "PFT1 rank out of range: " + std::to_string(rank));
  const std::size_t header = 5 + 4 * rank;
  require(bytes.size() >= header, Errc::kTruncated, "PFT1 header truncated");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes.data() + 5 + 4 * i);
    require(shape[i] >= 1, Errc::kDimMismatch, "PFT1 dim of zero");
  }
  const std::size_t count = shape_size(shape);
  const std::size_t payload = bytes.size() - header;
  require(payload >= 4 * count, Errc::kTruncated,
          "PFT1 payload truncated: declared " + shape_string(shape) + " needs " +
              std::to_string(4 * count) + " bytes, found " + std::to_string(payload));
  require(payload == 4 * count, Errc::kDimMismatch,
          "PFT1 payload has trailing bytes for declared " + shape_string(shape));
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i)
    data[i] = std::bit_cast<float>(get_u32(bytes.data() + header + 4 * i));
  return Tensor<float>(std::move(shape), std::move(data));
}

void save_tensor(const Tensor<float>& t, const std::filesystem::path& path) {
  write_bytes(path, encode_tensor(t));
}

void save_tensor(const Tensor<double>& t, const std::filesystem::path& path) {
  save_tensor(t.cast<float>(), path);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::kIo, "cannot open for reading: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::uint8_t quantize_u8(double v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

void write_png(const std::filesystem::path& path, std::size_t width,
               std::size_t height, std::size_t channels,
               std::span<const std::uint8_t> pixels) {
  require(channels == 1 || channels == 3, Errc::kShape,
          "PNG export supports 1 or 3 channels");
  require(pixels.size() == width * height * channels, Errc::kShape,
          "PNG pixel buffer size mismatch");

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(Errc::kIo, "cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::kIo, "libpng write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void export_png(const MSImage& img, const std::filesystem::path& path,
                std::span<const std::size_t> channel_order) {
  require(!channel_order.empty() && channel_order.size() <= 3, Errc::kShape,
          "export_png selects 1 to 3 channels");
  for (std::size_t c : channel_order) {
    require(c < img.channels(), Errc::kShape,
            "channel index " + std::to_string(c) + " out of range for " +
                std::to_string(img.channels()) + "-channel image");
  }
  // Two selected channels are padded with a zero blue plane.
  const std::size_t out_ch = channel_order.size() == 1 ? 1 : 3;
  const std::size_t h = img.height(), w = img.width();
  std::vector<std::uint8_t> px(h * w * out_ch, 0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < channel_order.size(); ++k)
        px[(i * w + j) * out_ch + k] = quantize_u8(img(channel_order[k], i, j));
  write_png(path, w, h, out_ch, px);
}

void export_png(const PanImage& img, const std::filesystem::path& path) {
  const std::size_t h = img.height(), w = img.width();
  std::vector<std::uint8_t> px(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) px[i * w + j] = quantize_u8(img(i, j));
  write_png(path, w, h, 1, px);
}

}  // namespace pgcu
