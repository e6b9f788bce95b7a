#include "vscam/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vscam/errors.hpp"
#include "vscam/ops.hpp"

namespace vscam {

using nlohmann::json;

Tensor explanation_map(const Heatmap& heatmap, const Tensor& image) {
  if (image.rank() != 3 || image.dim(1) != heatmap.height() || image.dim(2) != heatmap.width()) {
    throw DimensionError("heatmap " + shape_str(heatmap.values.shape()) +
                         " does not match image " + shape_str(image.shape()));
  }
  const std::size_t plane = heatmap.values.numel();
  Tensor out(image.shape());
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = heatmap.values[p] * image[c * plane + p];
  return out;
}

double confidence_drop_percent(double s_orig, double s_expl) {
  if (!(s_orig > 0.0)) {
    throw DomainError("confidence drop needs a positive original score (got " +
                      std::to_string(s_orig) + "); score in softmax mode");
  }
  return 100.0 * (1.0 - s_expl / s_orig);
}

namespace {

double score_of(const ViGModel& model, const Tensor& image, std::size_t c, ScoreMode mode) {
  const Tensor logits = predict_logits(model, image);
  return mode == ScoreMode::softmax ? ops::softmax(logits)[c] : logits[c];
}

}  // namespace

DropResult confidence_drop(const ViGModel& model, const Tensor& image, const Heatmap& heatmap,
                           std::size_t class_index, ScoreMode mode) {
  if (class_index >= model.config().n_classes) throw DomainError("class index out of range");
  DropResult r;
  r.score_original = score_of(model, image, class_index, mode);
  r.score_explained = score_of(model, explanation_map(heatmap, image), class_index, mode);
  r.drop = confidence_drop_percent(r.score_original, r.score_explained);
  return r;
}

double localization_mass(const Tensor& heatmap, const Tensor& mask) {
  if (heatmap.shape() != mask.shape()) {
    throw DimensionError("heatmap " + shape_str(heatmap.shape()) + " and mask " +
                         shape_str(mask.shape()) + " differ in size");
  }
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < heatmap.numel(); ++i) {
    total += heatmap[i];
    if (mask[i] > 0.5) inside += heatmap[i];
  }
  if (!(total > 0.0)) throw DomainError("localization mass of an all-zero heatmap");
  return inside / total;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void aggregate_report(MetricsReport& report, std::size_t n_classes) {
  if (report.per_image.empty()) throw DomainError("a report needs at least one image");
  if (n_classes == 0) throw DomainError("a report needs at least one class");
  report.n_images = report.per_image.size();
  report.per_class.assign(n_classes, {});
  for (std::size_t c = 0; c < n_classes; ++c) report.per_class[c].class_index = c;

  double sum = 0.0, clamped = 0.0;
  std::size_t increases = 0;
  std::vector<double> masses;
  for (const ImageMetrics& m : report.per_image) {
    if (m.label >= n_classes) throw DomainError("image label outside the class range");
    sum += m.drop;
    clamped += std::max(0.0, m.drop);
    increases += m.drop < 0.0;
    if (m.localization) masses.push_back(*m.localization);
    ClassMetrics& cm = report.per_class[m.label];
    ++cm.n_images;
    cm.drops.push_back(m.drop);
    cm.increase_count += m.drop < 0.0;
  }
  const auto n = static_cast<double>(report.n_images);
  report.mean_confidence_drop = sum / n;
  report.mean_clamped_drop = clamped / n;
  report.increase_count = increases;
  report.increase_percent = 100.0 * static_cast<double>(increases) / n;
  report.median_localization =
      masses.size() == report.n_images ? std::optional<double>(median(masses)) : std::nullopt;
  for (ClassMetrics& cm : report.per_class) {
    if (cm.drops.empty()) continue;
    double s = 0.0, sc = 0.0;
    for (double d : cm.drops) {
      s += d;
      sc += std::max(0.0, d);
    }
    cm.mean_drop = s / static_cast<double>(cm.drops.size());
    cm.mean_clamped_drop = sc / static_cast<double>(cm.drops.size());
  }
}

MetricsReport evaluate_dataset(const ViGModel& model, std::span<const DatasetItem> items,
                               const EvalOptions& options) {
  if (items.empty()) throw DomainError("cannot evaluate an empty dataset");
  MetricsReport report;
  const ExplainOptions& ex = options.explain;
  report.method = std::string(to_string(ex.method));
  report.score_mode = std::string(to_string(options.metric_mode));
  report.layer = ex.layer.value_or(model.config().total_blocks() - 1);
  report.measure = ex.method == CamMethod::vscam ? std::string(to_string(ex.measure)) : "";
  report.top_k = ex.method == CamMethod::vscam ? ex.top_k : std::nullopt;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const DatasetItem& item = items[i];
    const Explanation e = explain(model, item.image, item.label, ex);
    const DropResult d = confidence_drop(model, item.image, e.heatmap, item.label, options.metric_mode);
    ImageMetrics m{i, item.filename, item.label, d.score_original, d.score_explained, d.drop, {}};
    if (item.mask) {
      const bool empty = std::all_of(e.heatmap.values.data().begin(), e.heatmap.values.data().end(),
                                     [](double v) { return v == 0.0; });
      // A flat heatmap carries no location; score it as the uniform map.
      m.localization = empty ? localization_mass(Tensor(item.mask->shape(), 1.0), *item.mask)
                             : localization_mass(e.heatmap.values, *item.mask);
    }
    report.per_image.push_back(std::move(m));
  }
  aggregate_report(report, model.config().n_classes);
  return report;
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["method"] = r.method;
  j["score_mode"] = r.score_mode;
  j["layer"] = r.layer;
  j["measure"] = r.measure;
  j["top_k"] = r.top_k ? json(*r.top_k) : json(nullptr);
  j["n_images"] = r.n_images;
  j["mean_confidence_drop"] = r.mean_confidence_drop;
  j["mean_clamped_drop"] = r.mean_clamped_drop;
  j["increase_count"] = r.increase_count;
  j["increase_percent"] = r.increase_percent;
  j["median_localization"] = r.median_localization ? json(*r.median_localization) : json(nullptr);
  json classes = json::array();
  for (const ClassMetrics& c : r.per_class) {
    classes.push_back({{"class", c.class_index},
                       {"n_images", c.n_images},
                       {"mean_drop", c.mean_drop},
                       {"mean_clamped_drop", c.mean_clamped_drop},
                       {"increase_count", c.increase_count},
                       {"drops", c.drops}});
  }
  j["per_class"] = std::move(classes);
  json images = json::array();
  for (const ImageMetrics& m : r.per_image) {
    images.push_back({{"index", m.index},
                      {"filename", m.filename},
                      {"label", m.label},
                      {"score_original", m.score_original},
                      {"score_explained", m.score_explained},
                      {"drop", m.drop},
                      {"localization", m.localization ? json(*m.localization) : json(nullptr)}});
  }
  j["per_image"] = std::move(images);
  return j;
}

namespace {

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("report lacks field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("report field '") + key + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("report lacks field '") + key + "'");
  if (j.at(key).is_null()) return std::nullopt;
  return field<T>(j, key);
}

}  // namespace

MetricsReport report_from_json(const json& j) {
  const int version = field<int>(j, "schema_version");
  if (version != kReportSchemaVersion) {
    throw FormatError("unsupported report schema version " + std::to_string(version));
  }
  MetricsReport r;
  r.method = field<std::string>(j, "method");
  r.score_mode = field<std::string>(j, "score_mode");
  r.layer = field<std::size_t>(j, "layer");
  r.measure = field<std::string>(j, "measure");
  r.top_k = optional_field<std::size_t>(j, "top_k");
  r.n_images = field<std::size_t>(j, "n_images");
  r.mean_confidence_drop = field<double>(j, "mean_confidence_drop");
  r.mean_clamped_drop = field<double>(j, "mean_clamped_drop");
  r.increase_count = field<std::size_t>(j, "increase_count");
  r.increase_percent = field<double>(j, "increase_percent");
  r.median_localization = optional_field<double>(j, "median_localization");
  for (const json& c : field<json>(j, "per_class")) {
    r.per_class.push_back({field<std::size_t>(c, "class"), field<std::size_t>(c, "n_images"),
                           field<double>(c, "mean_drop"), field<double>(c, "mean_clamped_drop"),
                           field<std::size_t>(c, "increase_count"),
                           field<std::vector<double>>(c, "drops")});
  }
  if (r.per_class.empty()) throw FormatError("report has an empty per_class array");
  for (const json& m : field<json>(j, "per_image")) {
    r.per_image.push_back({field<std::size_t>(m, "index"), field<std::string>(m, "filename"),
                           field<std::size_t>(m, "label"), field<double>(m, "score_original"),
                           field<double>(m, "score_explained"), field<double>(m, "drop"),
                           optional_field<double>(m, "localization")});
  }
  return r;
}

void export_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write report " + path.string());
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw FormatError("failed writing report " + path.string());
}

MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open report " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

}  // namespace

void write_class_csv(const MetricsReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "class,n_images,mean_confidence_drop,mean_clamped_drop,increase_count,increase_percent\n";
  for (const ClassMetrics& c : report.per_class) {
    const double pct = c.n_images ? 100.0 * static_cast<double>(c.increase_count) /
                                        static_cast<double>(c.n_images)
                                  : 0.0;
    out << c.class_index << ',' << c.n_images << ',' << c.mean_drop << ',' << c.mean_clamped_drop
        << ',' << c.increase_count << ',' << pct << '\n';
  }
}

void write_image_csv(const MetricsReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "index,filename,label,score_original,score_explained,confidence_drop,localization_mass\n";
  for (const ImageMetrics& m : report.per_image) {
    out << m.index << ',' << m.filename << ',' << m.label << ',' << m.score_original << ','
        << m.score_explained << ',' << m.drop << ',';
    if (m.localization) out << *m.localization;
    out << '\n';
  }
}

}  // namespace vscam
