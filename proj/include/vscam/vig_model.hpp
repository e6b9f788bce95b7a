#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vscam/tape.hpp"
#include "vscam/tensor.hpp"
#include "vscam/vig_config.hpp"

namespace vscam {

/// Named parameter tensors of a ViG model, keyed by canonical names such as
/// "stage0.block0.grapher_in.weight".
using WeightMap = std::map<std::string, Tensor>;

/// Canonical name and shape of every parameter the config requires, in construction order.
std::vector<std::pair<std::string, Shape>> weight_schema(const ViGConfig& config);

class ViGModel {
 public:
  /// Validates the config and that `weights` holds exactly the schema's names and shapes.
  ViGModel(ViGConfig config, WeightMap weights, std::uint64_t seed = 0);

  const ViGConfig& config() const noexcept { return config_; }
  const WeightMap& weights() const noexcept { return weights_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const Tensor& weight(const std::string& name) const;
  Tensor& weight(const std::string& name);

  std::size_t parameter_count() const;

 private:
  ViGConfig config_;
  WeightMap weights_;
  std::uint64_t seed_;
};

/// Xavier-uniform weights (biases and positional embeddings start at zero), rounded to
/// single precision. Reproducible from `seed`.
ViGModel init_random(const ViGConfig& config, std::uint64_t seed);

/// Weight and bias nodes of one fully-connected layer (x * weight + bias).
struct LinearVars {
  Var weight;
  Var bias;
};

struct GrapherVars {
  LinearVars in;      ///< D x D
  LinearVars update;  ///< grouped: H x (2D/H) x (D/H), bias D
  LinearVars out;     ///< D x D
};

struct GrapherSettings {
  std::size_t k_neighbors = 4;
  Activation activation = Activation::gelu;
  Aggregator aggregator = Aggregator::max_relative;
  DegreeNorm degree_norm = DegreeNorm::inverse_sqrt;
  bool residual = true;
};

/// Grapher on N x D vertex features: project, aggregate over the KNN graph, grouped update,
/// activation, output projection, plus the input when residual is on. The graph is built
/// from the projected features unless `fixed_graph` is given. Throws ConfigError when the
/// weight shapes do not fit D.
Var grapher_forward(Tape& tape, Var v, const GrapherVars& w, const GrapherSettings& settings,
                    const PatchGraph* fixed_graph = nullptr);

/// act(y * W1 + b1) * W2 + b2 + y. Throws ConfigError when the shapes do not chain.
Var ffn_forward(Tape& tape, Var y, const LinearVars& fc1, const LinearVars& fc2,
                Activation activation);

/// One record per block: the captured feature map and its tape node.
struct BlockCapture {
  std::size_t stage = 0;
  std::size_t block = 0;  ///< index within the stage
  std::size_t side = 0;   ///< the map is side x side vertices
  std::size_t dim = 0;
  Var var;                ///< N x D node on the tape (N = side * side, raster order)

  /// Feature map as side x side x dim.
  Tensor features(const Tape& tape) const { return tape.value(var).reshaped({side, side, dim}); }
  /// d root / d features as side x side x dim; valid after tape.backward().
  Tensor gradient(const Tape& tape) const { return tape.grad(var).reshaped({side, side, dim}); }
};

struct ActivationCapture {
  std::vector<BlockCapture> blocks;
};

struct ForwardOptions {
  /// Record per-block captures. Implies gradient tracking from the input image onward
  /// when weights are not tracked, so that backward() reaches the captured nodes.
  bool capture = false;
  /// Weights become requires_grad leaves (training).
  bool track_weights = false;
  /// Substitute the captured tensor of global block `first` with `second` (N x D); the
  /// remainder of the network runs from the substitute. Used by finite-difference checks.
  std::optional<std::pair<std::size_t, Tensor>> override_block;
};

struct ForwardResult {
  Var logits;  ///< rank-1, n_classes
  ActivationCapture capture;
  std::map<std::string, Var> weight_vars;
};

ForwardResult model_forward(const ViGModel& model, const Tensor& image, Tape& tape,
                            const ForwardOptions& options = {});

/// Class scores on which CAM gradients are taken.
enum class ScoreMode { logit, softmax };

std::string_view to_string(ScoreMode m);
ScoreMode parse_score_mode(std::string_view s);

/// Entry `c` of the logits, or of softmax(logits), as a scalar node. Equivalent to summing
/// the score vector after zeroing every entry but c.
Var class_score(Tape& tape, Var logits, std::size_t c, ScoreMode mode);

/// Logits of a single forward pass without gradient tracking.
Tensor predict_logits(const ViGModel& model, const Tensor& image,
                      Precision precision = Precision::float64);
std::size_t predict_class(const ViGModel& model, const Tensor& image,
                          Precision precision = Precision::float64);

struct LabeledImage {
  Tensor image;
  std::size_t label = 0;
};

/// Softmax cross-entropy with a plain SGD update averaged over the batch. Returns the
/// mean loss before the update.
double train_step(ViGModel& model, std::span<const LabeledImage> batch, double lr,
                  Precision precision = Precision::float32);

}  // namespace vscam
