#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vscam/cam.hpp"
#include "vscam/synth.hpp"

namespace vscam {

/// Heatmap broadcast over the channels of a 3 x H x W image and multiplied in.
Tensor explanation_map(const Heatmap& heatmap, const Tensor& image);

/// 100 * (s_orig - s_expl) / s_orig. Negative when the score rises.
/// Throws DomainError when s_orig <= 0 (use softmax scores).
double confidence_drop_percent(double s_orig, double s_expl);

struct DropResult {
  double score_original = 0;
  double score_explained = 0;
  double drop = 0;  ///< percent
};

/// Scores the image and its explanation map for `class_index`.
DropResult confidence_drop(const ViGModel& model, const Tensor& image, const Heatmap& heatmap,
                           std::size_t class_index, ScoreMode mode = ScoreMode::softmax);

/// Share of the heatmap's total mass lying on mask pixels. Throws DomainError for an all-zero
/// heatmap and DimensionError when sizes differ.
double localization_mass(const Tensor& heatmap, const Tensor& mask);

/// Reference figures for a pretrained ViG-Ti on ILSVRC, kept for comparison in reports.
namespace reference {
inline constexpr double kGradcamConfidenceDrop = 24.49;
inline constexpr double kGradcamIncreasePercent = 13.97;
inline constexpr double kVscamConfidenceDrop = 9.01;
inline constexpr double kVscamIncreasePercent = 33.05;
}  // namespace reference

struct ImageMetrics {
  std::size_t index = 0;
  std::string filename;
  std::size_t label = 0;
  double score_original = 0;
  double score_explained = 0;
  double drop = 0;
  std::optional<double> localization;

  friend bool operator==(const ImageMetrics&, const ImageMetrics&) = default;
};

struct ClassMetrics {
  std::size_t class_index = 0;
  std::size_t n_images = 0;
  double mean_drop = 0;
  double mean_clamped_drop = 0;
  std::size_t increase_count = 0;
  std::vector<double> drops;  ///< per-image drops, in dataset order

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct MetricsReport {
  std::string method;
  std::string score_mode = "softmax";
  std::size_t layer = 0;
  std::string measure;
  std::optional<std::size_t> top_k;
  std::size_t n_images = 0;
  double mean_confidence_drop = 0;  ///< unclamped
  double mean_clamped_drop = 0;     ///< mean of max(0, drop)
  std::size_t increase_count = 0;   ///< images with drop < 0
  double increase_percent = 0;
  std::optional<double> median_localization;
  std::vector<ClassMetrics> per_class;  ///< one entry per class index 0..n_classes-1
  std::vector<ImageMetrics> per_image;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Fills every aggregate of a report from its per-image rows. Throws DomainError when
/// there are no rows.
void aggregate_report(MetricsReport& report, std::size_t n_classes);

double median(std::vector<double> values);

struct EvalOptions {
  ExplainOptions explain;  ///< method, layer and the gradient score mode
  ScoreMode metric_mode = ScoreMode::softmax;
};

/// Explains every item for its ground-truth label and scores the explanation map.
MetricsReport evaluate_dataset(const ViGModel& model, std::span<const DatasetItem> items,
                               const EvalOptions& options);

nlohmann::json report_to_json(const MetricsReport& report);
/// Throws FormatError on a missing field, a wrong type or an unsupported schema version.
MetricsReport report_from_json(const nlohmann::json& j);

void export_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_report(const std::filesystem::path& path);

/// class,n_images,mean_confidence_drop,mean_clamped_drop,increase_count,increase_percent
void write_class_csv(const MetricsReport& report, const std::filesystem::path& path);
/// index,filename,label,score_original,score_explained,confidence_drop,localization_mass
void write_image_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace vscam
