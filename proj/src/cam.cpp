#include "vscam/cam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vscam/errors.hpp"
#include "vscam/ops.hpp"

namespace vscam {

std::string_view to_string(Similarity s) {
  switch (s) {
    case Similarity::euclidean: return "euclidean";
    case Similarity::angle: return "angle";
    case Similarity::projection: return "projection";
    case Similarity::inner: return "inner";
  }
  return "unknown";
}

Similarity parse_similarity(std::string_view s) {
  for (Similarity m : kAllSimilarities)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown similarity measure '" + std::string(s) +
                    "' (expected euclidean, angle, projection or inner)");
}

std::string_view to_string(CamMethod m) {
  return m == CamMethod::vscam ? "vscam" : "gradcam";
}

CamMethod parse_cam_method(std::string_view s) {
  if (s == "vscam") return CamMethod::vscam;
  if (s == "gradcam") return CamMethod::gradcam;
  throw ConfigError("unknown CAM method '" + std::string(s) + "' (expected vscam or gradcam)");
}

namespace {

void require_map3(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.numel() == 0) {
    throw DimensionError(std::string(what) + " must be a non-empty rows x cols x D tensor, got " +
                         shape_str(t.shape()));
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

Tensor ProbeMapSet::map(std::size_t a, std::size_t b) const {
  if (a >= rows || b >= cols) throw DomainError("probe vertex out of range");
  const std::size_t n = rows * cols;
  const auto first = maps.data().begin() + static_cast<std::ptrdiff_t>((a * cols + b) * n);
  return Tensor({rows, cols}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

ProbeMapSet compute_probe_maps(const Tensor& features, Similarity measure, ProjectionOrder order) {
  require_map3(features, "probe features");
  const std::size_t rows = features.dim(0), cols = features.dim(1), dim = features.dim(2);
  const std::size_t n = rows * cols;
  const double* f = features.data().data();

  std::vector<double> norms(n);
  for (std::size_t v = 0; v < n; ++v) norms[v] = std::sqrt(dot(f + v * dim, f + v * dim, dim));

  ProbeMapSet out{rows, cols, dim, measure, Tensor({rows, cols, rows, cols})};
  auto m = out.maps.data();
  for (std::size_t o = 0; o < n; ++o) {
    const double* a = f + o * dim;
    for (std::size_t p = 0; p < n; ++p) {
      const double* b = f + p * dim;
      double s = 0.0;
      switch (measure) {
        case Similarity::inner: s = dot(a, b, dim); break;
        case Similarity::euclidean: {
          double acc = 0.0;
          for (std::size_t k = 0; k < dim; ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
          s = std::sqrt(acc);
          break;
        }
        case Similarity::angle:
          if (norms[o] > kZeroNorm && norms[p] > kZeroNorm) {
            s = o == p ? 1.0 : dot(a, b, dim) / (norms[o] * norms[p]);
          }
          break;
        case Similarity::projection: {
          const double denom = order == ProjectionOrder::onto_probed ? norms[p] : norms[o];
          if (norms[o] > kZeroNorm && norms[p] > kZeroNorm) s = dot(a, b, dim) / denom;
          break;
        }
      }
      m[o * n + p] = s;
    }
  }
  return out;
}

SemanticBaseMap compute_semantic_base(const Tensor& gradient, std::size_t class_index,
                                      std::size_t layer) {
  require_map3(gradient, "gradient");
  const std::size_t rows = gradient.dim(0), cols = gradient.dim(1), dim = gradient.dim(2);
  const double* g = gradient.data().data();
  std::vector<double> omega(dim, 0.0);
  for (std::size_t v = 0; v < rows * cols; ++v)
    for (std::size_t d = 0; d < dim; ++d) omega[d] += g[v * dim + d];
  Tensor q({rows, cols});
  for (std::size_t v = 0; v < rows * cols; ++v) q[v] = dot(omega.data(), g + v * dim, dim);
  return {std::move(q), class_index, layer};
}

Tensor vscam_raw(const ProbeMapSet& probes, const SemanticBaseMap& base,
                 std::optional<std::size_t> top_k) {
  if (base.q.shape() != Shape{probes.rows, probes.cols}) {
    throw DimensionError("semantic base " + shape_str(base.q.shape()) +
                         " does not match probe layer " +
                         shape_str({probes.rows, probes.cols}));
  }
  const std::size_t n = probes.count();
  if (top_k && (*top_k < 1 || *top_k > n)) {
    throw DomainError("top_k must lie in [1, " + std::to_string(n) + "], got " +
                      std::to_string(*top_k));
  }
  const double* s = probes.maps.data().data();
  const double* q = base.q.data().data();
  Tensor raw({probes.rows, probes.cols});
  for (std::size_t o = 0; o < n; ++o) raw[o] = dot(s + o * n, q, n);
  if (!top_k || *top_k == n) return raw;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(raw[x]) > std::abs(raw[y]);
  });
  Tensor kept({probes.rows, probes.cols});
  for (std::size_t r = 0; r < *top_k; ++r) kept[order[r]] = raw[order[r]];
  return kept;
}

Heatmap compose_vscam(const ProbeMapSet& probes, const SemanticBaseMap& base,
                      std::optional<std::size_t> top_k, std::size_t out_h, std::size_t out_w) {
  return {normalize_minmax(resize_bilinear(vscam_raw(probes, base, top_k), out_h, out_w)),
          CamMethod::vscam, base.class_index};
}

Tensor gradcam_raw(const Tensor& features, const Tensor& gradient, bool relu) {
  require_map3(features, "features");
  if (features.shape() != gradient.shape()) {
    throw DimensionError("features " + shape_str(features.shape()) + " and gradient " +
                         shape_str(gradient.shape()) + " differ");
  }
  const std::size_t rows = features.dim(0), cols = features.dim(1), dim = features.dim(2);
  const double* f = features.data().data();
  const double* g = gradient.data().data();
  std::vector<double> alpha(dim, 0.0);
  for (std::size_t v = 0; v < rows * cols; ++v)
    for (std::size_t d = 0; d < dim; ++d) alpha[d] += g[v * dim + d];
  Tensor m({rows, cols});
  for (std::size_t v = 0; v < rows * cols; ++v) {
    const double x = dot(alpha.data(), f + v * dim, dim);
    m[v] = relu ? std::max(0.0, x) : x;
  }
  return m;
}

Heatmap gradcam(const Tensor& features, const Tensor& gradient, std::size_t out_h,
                std::size_t out_w, bool relu, std::size_t class_index) {
  return {normalize_minmax(resize_bilinear(gradcam_raw(features, gradient, relu), out_h, out_w)),
          CamMethod::gradcam, class_index};
}

Tensor resize_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2 || map.numel() == 0) {
    throw DimensionError("resize expects a non-empty 2-D map, got " + shape_str(map.shape()));
  }
  if (out_h == 0 || out_w == 0) throw DimensionError("resize target must be non-empty");
  const std::size_t in_h = map.dim(0), in_w = map.dim(1);
  // Source coordinate of an output pixel center, clamped to the outermost input centers.
  auto source = [](std::size_t o, std::size_t in, std::size_t out, std::size_t& lo,
                   std::size_t& hi, double& t) {
    double x = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(x));
    hi = std::min(lo + 1, in - 1);
    t = x - static_cast<double>(lo);
  };
  Tensor out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double ty;
    source(y, in_h, out_h, y0, y1, ty);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double tx;
      source(x, in_w, out_w, x0, x1, tx);
      const double top = (1 - tx) * map.at(y0, x0) + tx * map.at(y0, x1);
      const double bottom = (1 - tx) * map.at(y1, x0) + tx * map.at(y1, x1);
      out.at(y, x) = (1 - ty) * top + ty * bottom;
    }
  }
  return out;
}

Tensor normalize_minmax(const Tensor& map) {
  Tensor out(map.shape());
  if (map.numel() == 0) return out;
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double range = *hi - *lo;
  const double magnitude = std::max(std::abs(*hi), std::abs(*lo));
  if (!(range > 1e-12 * magnitude) || !std::isfinite(range)) return out;
  for (std::size_t i = 0; i < map.numel(); ++i) {
    out[i] = std::clamp((map[i] - *lo) / range, 0.0, 1.0);
  }
  return out;
}

Heatmap topology_map(const Tensor& features, std::size_t row, std::size_t col,
                     Similarity measure, std::size_t reference_side, std::size_t out_h,
                     std::size_t out_w) {
  require_map3(features, "features");
  if (row >= reference_side || col >= reference_side) {
    throw DomainError("vertex (" + std::to_string(row) + "," + std::to_string(col) +
                      ") lies outside the " + std::to_string(reference_side) + "x" +
                      std::to_string(reference_side) + " reference grid");
  }
  const std::size_t rows = features.dim(0), cols = features.dim(1), dim = features.dim(2);
  Tensor grid = features;
  if (rows != reference_side || cols != reference_side) {
    // avgpool2d works channel-first.
    Tensor chw({dim, rows, cols});
    for (std::size_t v = 0; v < rows * cols; ++v)
      for (std::size_t d = 0; d < dim; ++d) chw[d * rows * cols + v] = features[v * dim + d];
    const Tensor pooled = ops::avgpool2d(chw, reference_side, reference_side);
    const std::size_t n = reference_side * reference_side;
    grid = Tensor({reference_side, reference_side, dim});
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t d = 0; d < dim; ++d) grid[v * dim + d] = pooled[d * n + v];
  }
  const ProbeMapSet probes = compute_probe_maps(grid, measure);
  return {normalize_minmax(resize_bilinear(probes.map(row, col), out_h, out_w)), CamMethod::vscam,
          0};
}

ScoredLayers score_layers(const ViGModel& model, const Tensor& image, std::size_t class_index,
                          ScoreMode mode, Precision precision) {
  if (class_index >= model.config().n_classes) {
    throw DomainError("class " + std::to_string(class_index) + " out of range for " +
                      std::to_string(model.config().n_classes) + " classes");
  }
  Tape tape(precision);
  ForwardOptions options;
  options.capture = true;
  const ForwardResult fwd = model_forward(model, image, tape, options);
  const Var score = class_score(tape, fwd.logits, class_index, mode);
  tape.backward(score);
  ScoredLayers out;
  out.score = tape.value(score).item();
  for (const BlockCapture& b : fwd.capture.blocks) {
    out.layers.push_back({b.stage, b.block, b.features(tape), b.gradient(tape)});
  }
  return out;
}

Explanation explain(const ViGModel& model, const Tensor& image, std::size_t class_index,
                    const ExplainOptions& options) {
  const std::size_t blocks = model.config().total_blocks();
  const std::size_t layer = options.layer.value_or(blocks - 1);
  if (layer >= blocks) {
    throw DomainError("layer " + std::to_string(layer) + " out of range; the model has " +
                      std::to_string(blocks) + " blocks");
  }
  if (image.rank() != 3) throw DimensionError("image must be 3 x H x W, got " + shape_str(image.shape()));
  const ScoredLayers scored = score_layers(model, image, class_index, options.score_mode,
                                           options.precision);
  const LayerState& state = scored.layers[layer];
  const std::size_t out_h = image.dim(1), out_w = image.dim(2);

  Explanation e;
  e.layer = layer;
  e.score = scored.score;
  if (options.method == CamMethod::vscam) {
    const ProbeMapSet probes = compute_probe_maps(state.features, options.measure, options.projection);
    const SemanticBaseMap base = compute_semantic_base(state.gradient, class_index, layer);
    e.raw = vscam_raw(probes, base, options.top_k);
  } else {
    e.raw = gradcam_raw(state.features, state.gradient, options.relu);
  }
  e.heatmap = {normalize_minmax(resize_bilinear(e.raw, out_h, out_w)), options.method, class_index};
  return e;
}

}  // namespace vscam
