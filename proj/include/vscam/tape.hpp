#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "vscam/graph.hpp"
#include "vscam/ops.hpp"
#include "vscam/tensor.hpp"

namespace vscam {

/// Numeric mode of a tape. float32 rounds every recorded value and gradient to single
/// precision; float64 keeps full double precision (used by the oracle tests).
enum class Precision { float32, float64 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view s);

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

enum class OpKind {
  leaf,
  matmul,
  transpose,
  reshape,
  conv2d,
  add,
  sub,
  mul,
  scale,
  relu,
  gelu,
  add_bias,
  reduce_sum,
  reduce_mean,
  reduce_max,
  avgpool2d,
  softmax,
  pick,
  cross_entropy,
  grouped_matmul,
  max_relative,
  mean_aggregate,
};

std::string_view to_string(OpKind kind);

/// Append-only record of forward operations with reverse-mode replay.
///
/// Every op stores its output value and the ids of its inputs; inputs always have smaller
/// ids than the node that consumes them, so a single reverse sweep over ids is a valid
/// topological order. Gradients are only propagated into nodes that (transitively) depend
/// on a leaf created with requires_grad. A tape is single-owner and not thread-safe.
class Tape {
 public:
  explicit Tape(Precision precision = Precision::float64) : precision_(precision) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Precision precision() const noexcept { return precision_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  Var leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::span<const std::size_t> inputs(Var v) const;

  Var matmul(Var a, Var b);
  Var transpose(Var x);
  Var reshape(Var x, Shape shape);
  Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var relu(Var x);
  Var gelu(Var x);
  Var add_bias(Var x, Var bias);
  Var reduce(ops::Reduce op, Var x, const std::vector<std::size_t>& axes);
  Var sum(Var x) { return reduce(ops::Reduce::sum, x, {}); }
  Var avgpool2d(Var x, std::size_t out_h, std::size_t out_w);
  Var softmax(Var logits);
  /// Single element of x (flat index) as a scalar node; gradient is a one-hot mask.
  Var pick(Var x, std::size_t flat_index);
  /// -log softmax(logits)[label] for a rank-1 logit vector.
  Var cross_entropy(Var logits, std::size_t label);
  Var grouped_matmul(Var x, Var weight);
  /// Max-relative aggregation; the graph is a constant of the recorded op.
  Var max_relative(Var x, const PatchGraph& graph);
  /// [x, normalized neighbor mean] per vertex (N x 2D); the graph is a constant.
  Var mean_aggregate(Var x, const PatchGraph& graph, DegreeNorm norm);

  /// Reverse sweep from a single-element root (seed 1).
  void backward(Var root);
  /// Reverse sweep with an explicit seed of the root's shape.
  void backward(Var root, const Tensor& seed);

  bool has_grad(Var v) const;
  /// d root / d v. Nodes that do not influence the root get a zero tensor.
  Tensor grad(Var v) const;

 private:
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad;
    BackwardFn backward;
  };

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);
  void accumulate(std::size_t id, const Tensor& g);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Node& node(Var v) const;
  void round_if_single(Tensor& t) const;
  void check_writable() const;

  Precision precision_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

}  // namespace vscam
