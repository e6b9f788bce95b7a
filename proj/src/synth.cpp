#include "vscam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "vscam/errors.hpp"
#include "vscam/png_io.hpp"

namespace vscam {

std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::cross: return "cross";
  }
  return "unknown";
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

struct Placement {
  double cx, cy, r, theta;
};

bool inside(ShapeKind kind, const Placement& p, double x, double y) {
  const double dx = x - p.cx, dy = y - p.cy;
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  switch (kind) {
    case ShapeKind::disk: return dx * dx + dy * dy <= p.r * p.r;
    case ShapeKind::square: {
      const double half = 0.8 * p.r;
      return std::abs(u) <= half && std::abs(v) <= half;
    }
    case ShapeKind::triangle: {
      // Equilateral, circumradius r; each edge sits at distance r/2 opposite a vertex.
      for (int k = 0; k < 3; ++k) {
        const double a = 2.0 * std::numbers::pi * k / 3.0 - std::numbers::pi / 2.0;
        if (u * std::cos(a) + v * std::sin(a) > 0.5 * p.r) return false;
      }
      return true;
    }
    case ShapeKind::cross: {
      const double arm = 0.35 * p.r;
      return (std::abs(u) <= p.r && std::abs(v) <= arm) || (std::abs(v) <= p.r && std::abs(u) <= arm);
    }
  }
  return false;
}

// Smooth value noise on a coarse lattice, bilinearly interpolated.
std::vector<double> value_noise(std::size_t side, std::size_t cells, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> lattice((cells + 1) * (cells + 1));
  for (double& v : lattice) v = u(rng);
  std::vector<double> out(side * side);
  const double step = static_cast<double>(cells) / static_cast<double>(side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * step;
      const double fy = (static_cast<double>(y) + 0.5) * step;
      const auto ix = std::min(static_cast<std::size_t>(fx), cells - 1);
      const auto iy = std::min(static_cast<std::size_t>(fy), cells - 1);
      const double tx = fx - static_cast<double>(ix), ty = fy - static_cast<double>(iy);
      auto at = [&](std::size_t a, std::size_t b) { return lattice[b * (cells + 1) + a]; };
      out[y * side + x] = (1 - ty) * ((1 - tx) * at(ix, iy) + tx * at(ix + 1, iy)) +
                          ty * ((1 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1));
    }
  return out;
}

}  // namespace

SyntheticSample synth_sample(std::size_t index, std::size_t side, std::uint64_t seed) {
  if (side < 16) throw DomainError("synthetic images need side >= 16, got " + std::to_string(side));
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto kind = static_cast<ShapeKind>(index % kShapeClasses);
  const double m = static_cast<double>(side);
  const std::size_t area = side * side;

  // Object placement, redrawn until the mask area is in bounds.
  Tensor mask({side, side});
  for (;;) {
    Placement p;
    p.r = m * (0.22 + 0.12 * unit(rng));
    p.cx = p.r + (m - 2.0 * p.r) * unit(rng);
    p.cy = p.r + (m - 2.0 * p.r) * unit(rng);
    p.theta = 2.0 * std::numbers::pi * unit(rng);
    std::size_t covered = 0;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const bool in = inside(kind, p, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        mask.at(y, x) = in ? 1.0 : 0.0;
        covered += in;
      }
    const double frac = static_cast<double>(covered) / static_cast<double>(area);
    if (frac >= kMinMaskFraction && frac <= kMaxMaskFraction) break;
  }

  // Background: a dark base color with low-frequency blotches and per-pixel grain. The
  // object is always brighter than its background.
  std::array<double, 3> base{};
  for (double& b : base) b = 0.1 + 0.25 * unit(rng);
  std::array<double, 3> color{};
  for (double& c : color) c = 0.65 + 0.35 * unit(rng);
  std::normal_distribution<double> grain(0.0, 0.05);
  // Global illumination, so that dimmed objects are in distribution.
  const double gain = 0.4 + 0.6 * unit(rng);
  Tensor image({3, side, side});
  for (std::size_t c = 0; c < 3; ++c) {
    const auto blotch = value_noise(side, 4, rng);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double bg = base[c] + 0.15 * blotch[y * side + x] + grain(rng);
        const double fg = color[c] + 0.5 * grain(rng);
        image.at(c, y, x) = quantize(gain * (mask.at(y, x) > 0.5 ? fg : bg));
      }
  }
  return SyntheticSample{std::move(image), static_cast<std::size_t>(kind), std::move(mask), seed};
}

std::vector<SyntheticSample> synth_generate(std::size_t n, std::size_t side, std::uint64_t seed) {
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_sample(i, side, seed));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "masks");
  std::ofstream labels(dir / "labels.tsv");
  if (!labels) throw FormatError("cannot write " + (dir / "labels.tsv").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << i << ".png";
    write_png(dir / name.str(), tensor_to_image(samples[i].image));
    const Tensor& mk = samples[i].mask;
    write_png(dir / "masks" / name.str(), tensor_to_image(mk.reshaped({1, mk.dim(0), mk.dim(1)})));
    labels << name.str() << '\t' << samples[i].label << '\n';
  }
}

std::vector<DatasetItem> read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path tsv = dir / "labels.tsv";
  std::ifstream in(tsv);
  if (!in) throw FormatError("cannot open " + tsv.string());
  std::vector<DatasetItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(tsv.string() + ":" + std::to_string(lineno) + ": expected filename<TAB>class");
    }
    DatasetItem item;
    item.filename = line.substr(0, tab);
    try {
      std::size_t used = 0;
      const std::string label = line.substr(tab + 1);
      item.label = std::stoul(label, &used);
      if (used != label.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw FormatError(tsv.string() + ":" + std::to_string(lineno) + ": bad class index");
    }
    item.image = image_to_tensor(read_png(dir / item.filename, 3));
    const fs::path mask_path = dir / "masks" / item.filename;
    if (fs::exists(mask_path)) {
      Tensor m = image_to_tensor(read_png(mask_path, 1));
      for (double& v : m.data()) v = v >= 0.5 ? 1.0 : 0.0;
      item.mask = m.reshaped({m.dim(1), m.dim(2)});
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace vscam
