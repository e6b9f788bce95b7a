#pragma once

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "vscam/graph.hpp"

namespace vscam {

enum class Activation { relu, gelu };
enum class Aggregator { max_relative, mean };
/// Which tensor of a block the CAM engine sees: the Grapher output (input to the FFN)
/// or the block output after the FFN.
enum class CapturePoint { grapher, ffn };

struct StageConfig {
  std::size_t block_count = 1;
  std::size_t channel_dim = 16;
  std::size_t spatial_side = 8;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

/// Architecture of a ViG classifier: a three-conv stem down to patch_grid x patch_grid
/// vertices, stages of Grapher+FFN blocks joined by stride-2 convs, then pooling and a
/// linear head. The input side is 4 * patch_grid.
struct ViGConfig {
  std::vector<StageConfig> stages{{1, 16, 8}, {1, 32, 4}};
  std::size_t k_neighbors = 4;
  std::size_t n_heads = 2;
  std::size_t n_classes = 4;
  Activation activation = Activation::gelu;
  std::vector<std::size_t> stem_channels{8, 16, 16};
  std::size_t patch_grid = 8;

  std::size_t ffn_ratio = 4;
  bool grapher_residual = true;
  bool dynamic_graph = true;
  bool positional_embedding = false;
  Aggregator aggregator = Aggregator::max_relative;
  DegreeNorm degree_norm = DegreeNorm::inverse_sqrt;
  CapturePoint capture_point = CapturePoint::grapher;

  std::size_t input_side() const noexcept { return 4 * patch_grid; }
  std::size_t total_blocks() const noexcept;
  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  /// 32x32 input, stages (1, 16, 8x8) and (1, 32, 4x4), K=4, two heads, four classes.
  static ViGConfig desk();
  /// The ViG-Ti layout: 224x224 input, blocks 2/2/6/2 at D = 48/96/240/384, K=9, four heads.
  static ViGConfig vig_ti(std::size_t n_classes = 1000);

  friend bool operator==(const ViGConfig&, const ViGConfig&) = default;
};

std::string_view to_string(Activation a);
std::string_view to_string(Aggregator a);
std::string_view to_string(CapturePoint c);

void to_json(nlohmann::json& j, const ViGConfig& config);
/// Strict: unknown keys are rejected; absent keys keep the desk() defaults.
void from_json(const nlohmann::json& j, ViGConfig& config);

ViGConfig load_config(const std::filesystem::path& path);
void save_config(const ViGConfig& config, const std::filesystem::path& path);

}  // namespace vscam
