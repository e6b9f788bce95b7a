#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "vscam/tape.hpp"
#include "vscam/tensor.hpp"
#include "vscam/vig_model.hpp"

namespace vscam {

enum class Similarity { euclidean, angle, projection, inner };

std::string_view to_string(Similarity s);
/// Throws ConfigError for unknown names.
Similarity parse_similarity(std::string_view s);

inline constexpr Similarity kAllSimilarities[] = {Similarity::euclidean, Similarity::angle,
                                                  Similarity::projection, Similarity::inner};

/// Which vector the projection measure divides by.
enum class ProjectionOrder {
  onto_probed,  ///< dot / |F(i,j)|
  onto_origin,  ///< dot / |F(a,b)|
};

/// Norms at or below this are treated as zero by angle and projection.
inline constexpr double kZeroNorm = 1e-12;

/// Similarity of every vertex (a,b) against every vertex (i,j) of one feature map.
struct ProbeMapSet {
  std::size_t rows = 0, cols = 0, dim = 0;
  Similarity measure = Similarity::inner;
  Tensor maps;  ///< rows x cols x rows x cols; maps(a,b,i,j) = S_{a,b}(i,j)

  std::size_t count() const { return rows * cols; }
  double at(std::size_t a, std::size_t b, std::size_t i, std::size_t j) const {
    return maps[((a * cols + b) * rows + i) * cols + j];
  }
  /// S_{a,b} as rows x cols.
  Tensor map(std::size_t a, std::size_t b) const;
};

/// F is rows x cols x D.
ProbeMapSet compute_probe_maps(const Tensor& features, Similarity measure,
                               ProjectionOrder order = ProjectionOrder::onto_probed);

/// Gradient-only spatial map Q(i,j) = sum_d w_d * grad(i,j,d), w_d = sum_ij grad(i,j,d).
struct SemanticBaseMap {
  Tensor q;  ///< rows x cols
  std::size_t class_index = 0;
  std::size_t layer = 0;
};

SemanticBaseMap compute_semantic_base(const Tensor& gradient, std::size_t class_index,
                                      std::size_t layer = 0);

enum class CamMethod { vscam, gradcam };

std::string_view to_string(CamMethod m);
/// Throws ConfigError for unknown names.
CamMethod parse_cam_method(std::string_view s);

/// Normalized saliency map; values lie in [0,1].
struct Heatmap {
  Tensor values;  ///< height x width
  CamMethod source = CamMethod::vscam;
  std::size_t class_index = 0;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

/// Per-vertex coupling <S_{a,b}, Q> at layer resolution. With top_k set, only the k
/// vertices with the largest |coupling| keep their value; ties go to the lower raster index.
Tensor vscam_raw(const ProbeMapSet& probes, const SemanticBaseMap& base,
                 std::optional<std::size_t> top_k = std::nullopt);

Heatmap compose_vscam(const ProbeMapSet& probes, const SemanticBaseMap& base,
                      std::optional<std::size_t> top_k, std::size_t out_h, std::size_t out_w);

/// sum_d alpha_d F_d with alpha_d = sum_ij grad(i,j,d), at layer resolution.
Tensor gradcam_raw(const Tensor& features, const Tensor& gradient, bool relu = false);

Heatmap gradcam(const Tensor& features, const Tensor& gradient, std::size_t out_h,
                std::size_t out_w, bool relu = false, std::size_t class_index = 0);

/// Bilinear resize with half-pixel sampling centers and edge clamping.
Tensor resize_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w);

/// Min-max scaling to [0,1]. A constant map (up to rounding) becomes all zeros.
Tensor normalize_minmax(const Tensor& map);

/// Probe map of one vertex, after average pooling the features down to a
/// reference_side x reference_side grid. Throws DomainError when the vertex lies
/// outside that grid.
Heatmap topology_map(const Tensor& features, std::size_t row, std::size_t col,
                     Similarity measure, std::size_t reference_side, std::size_t out_h,
                     std::size_t out_w);

/// Features and d score / d features of one block.
struct LayerState {
  std::size_t stage = 0, block = 0;
  Tensor features;  ///< side x side x D
  Tensor gradient;  ///< same shape
};

struct ScoredLayers {
  double score = 0;  ///< the differentiated class score
  std::vector<LayerState> layers;  ///< one per block, in forward order
};

/// One forward pass with capture and one backward pass from the class score.
ScoredLayers score_layers(const ViGModel& model, const Tensor& image, std::size_t class_index,
                          ScoreMode mode = ScoreMode::logit,
                          Precision precision = Precision::float64);

struct ExplainOptions {
  CamMethod method = CamMethod::vscam;
  std::optional<std::size_t> layer;  ///< global block index; default is the last block
  Similarity measure = Similarity::inner;
  ProjectionOrder projection = ProjectionOrder::onto_probed;
  std::optional<std::size_t> top_k;  ///< vscam only; empty means every probe
  ScoreMode score_mode = ScoreMode::logit;
  bool relu = false;  ///< gradcam only
  Precision precision = Precision::float64;
};

struct Explanation {
  Heatmap heatmap;  ///< at input resolution
  Tensor raw;       ///< at layer resolution, before resize and normalization
  std::size_t layer = 0;
  double score = 0;
};

/// Heatmap for `class_index` at input resolution. Throws DomainError for an invalid
/// layer, class or top_k.
Explanation explain(const ViGModel& model, const Tensor& image, std::size_t class_index,
                    const ExplainOptions& options = {});

}  // namespace vscam
