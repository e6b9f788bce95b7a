#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "vscam/tensor.hpp"

namespace vscam {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels, rows top to bottom.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t* px(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * channels; }
  const std::uint8_t* px(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * channels;
  }

  friend bool operator==(const Image8&, const Image8&) = default;
};

std::vector<std::uint8_t> encode_png(const Image8& image);
void write_png(const std::filesystem::path& path, const Image8& image);
/// Reads any PNG; the result is converted to 1 or 3 channels per `channels`.
Image8 read_png(const std::filesystem::path& path, std::size_t channels);

std::uint8_t to_byte(double v);

/// C x H x W tensor in [0,1] (C = 1 or 3) to an 8-bit image.
Image8 tensor_to_image(const Tensor& t);
/// 8-bit image to a C x H x W tensor with values k/255.
Tensor image_to_tensor(const Image8& img);

}  // namespace vscam
