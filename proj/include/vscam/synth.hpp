#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vscam/tensor.hpp"

namespace vscam {

enum class ShapeKind : std::size_t { disk = 0, square = 1, triangle = 2, cross = 3 };
inline constexpr std::size_t kShapeClasses = 4;
std::string_view to_string(ShapeKind k);

/// One generated image: a single filled shape on a textured noise background.
struct SyntheticSample {
  Tensor image;       ///< 3 x M x M, values are multiples of 1/255
  std::size_t label;  ///< ShapeKind index
  Tensor mask;        ///< M x M, 1 on object pixels
  std::uint64_t seed;
};

inline constexpr double kMinMaskFraction = 0.02;
inline constexpr double kMaxMaskFraction = 0.50;

/// Sample i has label i % 4 and is drawn from its own stream seeded by (seed, i),
/// so a dataset is reproducible and any prefix of it is stable.
std::vector<SyntheticSample> synth_generate(std::size_t n, std::size_t side, std::uint64_t seed);
SyntheticSample synth_sample(std::size_t index, std::size_t side, std::uint64_t seed);

/// An image on disk with its label and optional object mask.
struct DatasetItem {
  std::string filename;
  Tensor image;  ///< 3 x H x W
  std::size_t label = 0;
  std::optional<Tensor> mask;  ///< H x W in {0,1}
};

/// Writes <dir>/<name>.png, <dir>/masks/<name>.png and <dir>/labels.tsv.
void write_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples);
/// Reads labels.tsv (filename TAB class-index) and the listed PNGs; masks/ is optional.
std::vector<DatasetItem> read_dataset(const std::filesystem::path& dir);

}  // namespace vscam
