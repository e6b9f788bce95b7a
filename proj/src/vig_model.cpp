#include "vscam/vig_model.hpp"

#include <cmath>
#include <random>

#include "vscam/errors.hpp"

namespace vscam {

namespace {

std::string block_prefix(std::size_t stage, std::size_t block) {
  return "stage" + std::to_string(stage) + ".block" + std::to_string(block) + ".";
}

// Fixed input normalization applied before the stem.
constexpr double kInputMean = 0.5;
constexpr double kInputStd = 0.25;

float round_to_f32(double v) { return static_cast<float>(v); }

// Fan-in / fan-out used for Xavier bounds.
std::pair<double, double> fans(const std::string& name, const Shape& s) {
  if (s.size() == 4) return {double(s[1] * s[2] * s[3]), double(s[0] * s[2] * s[3])};
  if (s.size() == 3 && name.find("grapher_update") != std::string::npos) {
    return {double(s[1]), double(s[2])};
  }
  if (s.size() == 2) return {double(s[0]), double(s[1])};
  return {0.0, 0.0};
}

bool starts_zero(const std::string& name) {
  return name.ends_with(".bias") || name.ends_with("pos_embed");
}

}  // namespace

std::vector<std::pair<std::string, Shape>> weight_schema(const ViGConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in_ch = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "stem.conv" + std::to_string(i) + ".";
    out.push_back({p + "weight", {c.stem_channels[i], in_ch, 3, 3}});
    out.push_back({p + "bias", {c.stem_channels[i]}});
    in_ch = c.stem_channels[i];
  }
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const auto& st = c.stages[s];
    const std::size_t d = st.channel_dim, h = c.n_heads, hidden = c.ffn_ratio * d;
    if (s > 0) {
      const std::string p = "stage" + std::to_string(s) + ".downsample.";
      out.push_back({p + "weight", {d, c.stages[s - 1].channel_dim, 3, 3}});
      out.push_back({p + "bias", {d}});
    }
    if (c.positional_embedding) {
      out.push_back({"stage" + std::to_string(s) + ".pos_embed", {d, st.spatial_side, st.spatial_side}});
    }
    for (std::size_t b = 0; b < st.block_count; ++b) {
      const std::string p = block_prefix(s, b);
      out.push_back({p + "grapher_in.weight", {d, d}});
      out.push_back({p + "grapher_in.bias", {d}});
      out.push_back({p + "grapher_update.weight", {h, 2 * d / h, d / h}});
      out.push_back({p + "grapher_update.bias", {d}});
      out.push_back({p + "grapher_out.weight", {d, d}});
      out.push_back({p + "grapher_out.bias", {d}});
      out.push_back({p + "ffn1.weight", {d, hidden}});
      out.push_back({p + "ffn1.bias", {hidden}});
      out.push_back({p + "ffn2.weight", {hidden, d}});
      out.push_back({p + "ffn2.bias", {d}});
    }
  }
  out.push_back({"head.weight", {c.stages.back().channel_dim, c.n_classes}});
  out.push_back({"head.bias", {c.n_classes}});
  return out;
}

ViGModel::ViGModel(ViGConfig config, WeightMap weights, std::uint64_t seed)
    : config_(std::move(config)), weights_(std::move(weights)), seed_(seed) {
  const auto schema = weight_schema(config_);
  for (const auto& [name, shape] : schema) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw ConfigError("missing weight tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ConfigError("weight '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(shape));
    }
  }
  if (weights_.size() != schema.size()) {
    for (const auto& [name, _] : weights_) {
      bool known = false;
      for (const auto& entry : schema) known = known || entry.first == name;
      if (!known) throw ConfigError("unknown weight tensor '" + name + "'");
    }
  }
}

const Tensor& ViGModel::weight(const std::string& name) const {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ConfigError("no weight named '" + name + "'");
  return it->second;
}

Tensor& ViGModel::weight(const std::string& name) {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ConfigError("no weight named '" + name + "'");
  return it->second;
}

std::size_t ViGModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : weights_) n += t.numel();
  return n;
}

ViGModel init_random(const ViGConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightMap weights;
  for (const auto& [name, shape] : weight_schema(config)) {
    Tensor t(shape);
    if (!starts_zero(name)) {
      const auto [fan_in, fan_out] = fans(name, shape);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : t.data()) v = round_to_f32(dist(rng));
    }
    weights.emplace(name, std::move(t));
  }
  return ViGModel(config, std::move(weights), seed);
}

std::string_view to_string(ScoreMode m) { return m == ScoreMode::logit ? "logit" : "softmax"; }

ScoreMode parse_score_mode(std::string_view s) {
  if (s == "logit") return ScoreMode::logit;
  if (s == "softmax") return ScoreMode::softmax;
  throw ConfigError("unknown score mode '" + std::string(s) + "'");
}

Var class_score(Tape& tape, Var logits, std::size_t c, ScoreMode mode) {
  if (mode == ScoreMode::softmax) return tape.pick(tape.softmax(logits), c);
  return tape.pick(logits, c);
}

namespace {

Var activate(Tape& tape, Var x, Activation a) {
  return a == Activation::gelu ? tape.gelu(x) : tape.relu(x);
}

Var apply_linear(Tape& tape, Var x, const LinearVars& l) {
  return tape.add_bias(tape.matmul(x, l.weight), l.bias);
}

void expect_shape(const Tape& tape, Var v, const Shape& shape, const char* what) {
  if (tape.value(v).shape() != shape) {
    throw ConfigError(std::string(what) + " has shape " + shape_str(tape.value(v).shape()) +
                      ", expected " + shape_str(shape));
  }
}

}  // namespace

Var grapher_forward(Tape& tape, Var v, const GrapherVars& w, const GrapherSettings& settings,
                    const PatchGraph* fixed_graph) {
  const Tensor& x = tape.value(v);
  if (x.rank() != 2) throw DimensionError("grapher expects N x D vertices, got " + shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  expect_shape(tape, w.in.weight, {d, d}, "grapher_in.weight");
  expect_shape(tape, w.in.bias, {d}, "grapher_in.bias");
  const Shape& uw = tape.value(w.update.weight).shape();
  if (uw.size() != 3 || uw[0] == 0 || uw[0] * uw[1] != 2 * d || uw[0] * uw[2] != d) {
    throw ConfigError("grapher_update.weight has shape " + shape_str(uw) + ", which does not fit D = " +
                      std::to_string(d));
  }
  expect_shape(tape, w.update.bias, {d}, "grapher_update.bias");
  expect_shape(tape, w.out.weight, {d, d}, "grapher_out.weight");
  expect_shape(tape, w.out.bias, {d}, "grapher_out.bias");

  Var u = apply_linear(tape, v, w.in);
  PatchGraph local;
  if (fixed_graph == nullptr) local = build_knn_graph(tape.value(u), settings.k_neighbors);
  const PatchGraph& graph = fixed_graph ? *fixed_graph : local;
  Var g = settings.aggregator == Aggregator::max_relative
              ? tape.max_relative(u, graph)
              : tape.mean_aggregate(u, graph, settings.degree_norm);
  Var h = tape.add_bias(tape.grouped_matmul(g, w.update.weight), w.update.bias);
  Var y = apply_linear(tape, activate(tape, h, settings.activation), w.out);
  return settings.residual ? tape.add(y, v) : y;
}

Var ffn_forward(Tape& tape, Var y, const LinearVars& fc1, const LinearVars& fc2,
                Activation activation) {
  const Tensor& x = tape.value(y);
  if (x.rank() != 2) throw DimensionError("ffn expects N x D vertices, got " + shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  const Shape& w1 = tape.value(fc1.weight).shape();
  if (w1.size() != 2 || w1[0] != d) {
    throw ConfigError("ffn1.weight has shape " + shape_str(w1) + ", expected D = " + std::to_string(d) + " rows");
  }
  expect_shape(tape, fc1.bias, {w1[1]}, "ffn1.bias");
  expect_shape(tape, fc2.weight, {w1[1], d}, "ffn2.weight");
  expect_shape(tape, fc2.bias, {d}, "ffn2.bias");
  Var hidden = activate(tape, apply_linear(tape, y, fc1), activation);
  return tape.add(apply_linear(tape, hidden, fc2), y);
}

namespace {

class ForwardBuilder {
 public:
  ForwardBuilder(const ViGModel& model, Tape& tape, const ForwardOptions& options)
      : model_(model), cfg_(model.config()), tape_(tape), options_(options) {}

  ForwardResult run(const Tensor& image) {
    const std::size_t m = cfg_.input_side();
    if (image.shape() != Shape{3, m, m}) {
      throw DimensionError("model expects a 3x" + std::to_string(m) + "x" + std::to_string(m) +
                           " image, got " + shape_str(image.shape()));
    }
    const bool track_input = options_.capture && !options_.track_weights;
    Var x = tape_.leaf(image, track_input);
    x = tape_.scale(tape_.add(x, tape_.leaf(Tensor::scalar(-kInputMean))), 1.0 / kInputStd);

    x = act(conv("stem.conv0.", x, 2));
    x = act(conv("stem.conv1.", x, 2));
    x = conv("stem.conv2.", x, 1);

    std::size_t global_block = 0;
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
      const auto& st = cfg_.stages[s];
      if (s > 0) x = conv("stage" + std::to_string(s) + ".downsample.", x, 2);
      if (cfg_.positional_embedding) x = tape_.add(x, w("stage" + std::to_string(s) + ".pos_embed"));

      const std::size_t d = st.channel_dim, side = st.spatial_side, n = side * side;
      Var v = tape_.transpose(tape_.reshape(x, {d, n}));
      std::optional<PatchGraph> stage_graph;
      for (std::size_t b = 0; b < st.block_count; ++b, ++global_block) {
        const std::string p = block_prefix(s, b);
        Var y = grapher(p, v, stage_graph);
        const bool at_grapher = cfg_.capture_point == CapturePoint::grapher;
        if (at_grapher) y = maybe_override(global_block, y, s, b, side, d);
        Var z = ffn(p, y);
        if (!at_grapher) z = maybe_override(global_block, z, s, b, side, d);
        v = z;
      }
      x = tape_.reshape(tape_.transpose(v), {d, side, side});
    }

    const std::size_t d_last = cfg_.stages.back().channel_dim;
    Var pooled = tape_.reshape(tape_.reduce(ops::Reduce::mean, x, {1, 2}), {1, d_last});
    Var logits = tape_.add_bias(tape_.matmul(pooled, w("head.weight")), w("head.bias"));
    result_.logits = tape_.reshape(logits, {cfg_.n_classes});
    return std::move(result_);
  }

 private:
  Var w(const std::string& name) {
    auto it = result_.weight_vars.find(name);
    if (it != result_.weight_vars.end()) return it->second;
    Var v = tape_.leaf(model_.weight(name), options_.track_weights);
    result_.weight_vars.emplace(name, v);
    return v;
  }

  Var act(Var x) { return cfg_.activation == Activation::gelu ? tape_.gelu(x) : tape_.relu(x); }

  Var conv(const std::string& prefix, Var x, std::size_t stride) {
    return tape_.add_bias(tape_.conv2d(x, w(prefix + "weight"), stride, 1), w(prefix + "bias"));
  }

  LinearVars lin(const std::string& prefix) { return {w(prefix + "weight"), w(prefix + "bias")}; }

  Var grapher(const std::string& p, Var v, std::optional<PatchGraph>& stage_graph) {
    const GrapherVars gw{lin(p + "grapher_in."), lin(p + "grapher_update."), lin(p + "grapher_out.")};
    const GrapherSettings settings{cfg_.k_neighbors, cfg_.activation, cfg_.aggregator,
                                   cfg_.degree_norm, cfg_.grapher_residual};
    if (cfg_.dynamic_graph) return grapher_forward(tape_, v, gw, settings);
    if (!stage_graph) stage_graph = build_knn_graph(tape_.value(v), cfg_.k_neighbors);
    return grapher_forward(tape_, v, gw, settings, &*stage_graph);
  }

  Var ffn(const std::string& p, Var y) {
    return ffn_forward(tape_, y, lin(p + "ffn1."), lin(p + "ffn2."), cfg_.activation);
  }

  Var maybe_override(std::size_t global_block, Var y, std::size_t s, std::size_t b,
                     std::size_t side, std::size_t d) {
    if (options_.override_block && options_.override_block->first == global_block) {
      const Tensor& sub = options_.override_block->second;
      if (sub.shape() != tape_.value(y).shape()) {
        throw DimensionError("override for block " + std::to_string(global_block) + " has shape " +
                             shape_str(sub.shape()) + ", expected " +
                             shape_str(tape_.value(y).shape()));
      }
      y = tape_.leaf(sub, true);
    }
    if (options_.capture) result_.capture.blocks.push_back(BlockCapture{s, b, side, d, y});
    return y;
  }

  const ViGModel& model_;
  const ViGConfig& cfg_;
  Tape& tape_;
  const ForwardOptions& options_;
  ForwardResult result_;
};

}  // namespace

ForwardResult model_forward(const ViGModel& model, const Tensor& image, Tape& tape,
                            const ForwardOptions& options) {
  return ForwardBuilder(model, tape, options).run(image);
}

Tensor predict_logits(const ViGModel& model, const Tensor& image, Precision precision) {
  Tape tape(precision);
  auto result = model_forward(model, image, tape);
  return tape.value(result.logits);
}

std::size_t predict_class(const ViGModel& model, const Tensor& image, Precision precision) {
  const Tensor logits = predict_logits(model, image, precision);
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

double train_step(ViGModel& model, std::span<const LabeledImage> batch, double lr,
                  Precision precision) {
  if (batch.empty()) throw DomainError("train_step: empty batch");
  const std::size_t n_classes = model.config().n_classes;
  for (const auto& s : batch) {
    if (s.label >= n_classes) {
      throw DomainError("train_step: label " + std::to_string(s.label) + " outside [0, " +
                        std::to_string(n_classes) + ")");
    }
  }
  std::map<std::string, Tensor> total;
  double loss_sum = 0.0;
  ForwardOptions opts;
  opts.track_weights = true;
  for (const auto& sample : batch) {
    Tape tape(precision);
    auto result = model_forward(model, sample.image, tape, opts);
    Var loss = tape.cross_entropy(result.logits, sample.label);
    loss_sum += tape.value(loss).item();
    tape.backward(loss);
    for (const auto& [name, var] : result.weight_vars) {
      Tensor g = tape.grad(var);
      auto it = total.find(name);
      if (it == total.end()) {
        total.emplace(name, std::move(g));
      } else {
        auto dst = it->second.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
      }
    }
  }
  const double step = lr / static_cast<double>(batch.size());
  if (step != 0.0) {
    for (auto& [name, g] : total) {
      auto wdata = model.weight(name).data();
      for (std::size_t i = 0; i < wdata.size(); ++i) {
        wdata[i] = static_cast<double>(round_to_f32(wdata[i] - step * g[i]));
      }
    }
  }
  return loss_sum / static_cast<double>(batch.size());
}

}  // namespace vscam
