#include "vscam/render.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vscam/errors.hpp"

namespace vscam {

Rgb jet(double v) {
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  auto channel = [v](double center) {
    return to_byte(std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0));
  };
  return {channel(3.0), channel(2.0), channel(1.0)};
}

Image8 render_gray(const Heatmap& heatmap) {
  const Tensor& v = heatmap.values;
  Image8 out(heatmap.width(), heatmap.height(), 1);
  for (std::size_t i = 0; i < v.numel(); ++i) out.pixels[i] = to_byte(v[i]);
  return out;
}

Image8 render_overlay(const Heatmap& heatmap, const Tensor& image, double alpha) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != heatmap.height() ||
      image.dim(2) != heatmap.width()) {
    throw DimensionError("overlay needs a 3 x " + std::to_string(heatmap.height()) + " x " +
                         std::to_string(heatmap.width()) + " image, got " +
                         shape_str(image.shape()));
  }
  const std::size_t h = heatmap.height(), w = heatmap.width();
  Image8 out(w, h, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Rgb c = jet(heatmap.values.at(y, x));
      for (std::size_t k = 0; k < 3; ++k) {
        const double blended = alpha * c[k] / 255.0 + (1.0 - alpha) * image.at(k, y, x);
        out.px(x, y)[k] = to_byte(blended);
      }
    }
  return out;
}

Image8 render_probe_grid(const ProbeMapSet& probes, std::size_t cell) {
  if (probes.rows != probes.cols) throw DimensionError("probe grid needs a square layer");
  if (cell == 0) throw DomainError("probe grid cell size must be positive");
  const std::size_t s = probes.rows;
  const std::size_t side = probe_grid_side(s, cell);
  const std::size_t tile = s * cell;
  const Tensor norm = normalize_minmax(probes.maps);
  Image8 out(side, side, 3, 255);
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t b = 0; b < s; ++b) {
      const std::size_t oy = a * (tile + 1), ox = b * (tile + 1);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const Rgb c = jet(norm[((a * s + b) * s + i) * s + j]);
          for (std::size_t dy = 0; dy < cell; ++dy)
            for (std::size_t dx = 0; dx < cell; ++dx) {
              std::copy(c.begin(), c.end(), out.px(ox + j * cell + dx, oy + i * cell + dy));
            }
        }
    }
  return out;
}

Image8 annotate_vertices(const Tensor& image, std::size_t reference_side,
                         const std::vector<VertexMark>& marks) {
  Image8 out = tensor_to_image(image);
  if (out.channels != 3) throw DimensionError("annotation needs an RGB image");
  if (reference_side == 0) throw DomainError("reference grid must be non-empty");
  for (const VertexMark& m : marks) {
    if (m.row >= reference_side || m.col >= reference_side) {
      throw DomainError("vertex (" + std::to_string(m.row) + "," + std::to_string(m.col) +
                        ") outside the reference grid");
    }
    const std::size_t y0 = m.row * out.height / reference_side;
    const std::size_t y1 = (m.row + 1) * out.height / reference_side - 1;
    const std::size_t x0 = m.col * out.width / reference_side;
    const std::size_t x1 = (m.col + 1) * out.width / reference_side - 1;
    for (std::size_t x = x0; x <= x1; ++x) {
      std::copy(m.color.begin(), m.color.end(), out.px(x, y0));
      std::copy(m.color.begin(), m.color.end(), out.px(x, y1));
    }
    for (std::size_t y = y0; y <= y1; ++y) {
      std::copy(m.color.begin(), m.color.end(), out.px(x0, y));
      std::copy(m.color.begin(), m.color.end(), out.px(x1, y));
    }
  }
  return out;
}

}  // namespace vscam
