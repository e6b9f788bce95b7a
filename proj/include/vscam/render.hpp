#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "vscam/cam.hpp"
#include "vscam/png_io.hpp"

namespace vscam {

using Rgb = std::array<std::uint8_t, 3>;

/// Jet colormap: 0 is dark blue (0,0,128), 1 is dark red (128,0,0).
Rgb jet(double v);

/// 8-bit grayscale rendering of a heatmap.
Image8 render_gray(const Heatmap& heatmap);

inline constexpr double kOverlayAlpha = 0.5;

/// Jet-colored heatmap blended over a 3 x H x W image. Throws DimensionError when sizes differ.
Image8 render_overlay(const Heatmap& heatmap, const Tensor& image, double alpha = kOverlayAlpha);

/// Every probe map of the set tiled in raster order with 1-pixel white separators. All
/// maps share one min-max normalization; each vertex becomes a cell x cell block.
Image8 render_probe_grid(const ProbeMapSet& probes, std::size_t cell = 1);

/// Side length in pixels of render_probe_grid's output.
inline std::size_t probe_grid_side(std::size_t side, std::size_t cell = 1) {
  return side * side * cell + (side - 1);
}

struct VertexMark {
  std::size_t row = 0, col = 0;
  Rgb color{255, 0, 0};
};

/// Outlines each vertex cell of a reference_side x reference_side grid on the image.
Image8 annotate_vertices(const Tensor& image, std::size_t reference_side,
                         const std::vector<VertexMark>& marks);

}  // namespace vscam
