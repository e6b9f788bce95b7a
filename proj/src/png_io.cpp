#include "vscam/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include "vscam/errors.hpp"

namespace vscam {

namespace {

png_uint_32 format_for(std::size_t channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw DimensionError("PNG images must have 1 or 3 channels, got " + std::to_string(channels));
}

struct ImageGuard {
  png_image* image;
  ~ImageGuard() { png_image_free(image); }
};

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw DimensionError("image buffer does not match its dimensions");
  }
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = format_for(image.channels);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encoding failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encoding failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Image8 read_png(const std::filesystem::path& path, std::size_t channels) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.c_str())) {
    throw FormatError("cannot read PNG " + path.string() + ": " + desc.message);
  }
  ImageGuard guard{&desc};
  desc.format = format_for(channels);
  Image8 img(desc.width, desc.height, channels);
  if (!png_image_finish_read(&desc, nullptr, img.pixels.data(), 0, nullptr)) {
    throw FormatError("cannot decode PNG " + path.string() + ": " + desc.message);
  }
  return img;
}

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

Image8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw DimensionError("expected a 1xHxW or 3xHxW tensor, got " + shape_str(t.shape()));
  }
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Image8 img(w, h, c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) img.px(x, y)[ch] = to_byte(t.at(ch, y, x));
  return img;
}

Tensor image_to_tensor(const Image8& img) {
  Tensor t({img.channels, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t ch = 0; ch < img.channels; ++ch)
        t.at(ch, y, x) = static_cast<double>(img.px(x, y)[ch]) / 255.0;
  return t;
}

}  // namespace vscam
