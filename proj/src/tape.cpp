#include "vscam/tape.hpp"

#include <cmath>
#include <string>

#include "vscam/errors.hpp"

namespace vscam {

namespace {

// Output flat index for each input flat index of a reduction over `axes`.
std::vector<std::size_t> reduce_index_map(const Shape& shape, const std::vector<std::size_t>& axes) {
  const std::size_t rank = shape.size();
  std::vector<bool> reduced(rank, axes.empty());
  for (std::size_t a : axes) reduced[a] = true;
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t a = rank; a-- > 0;) {
    if (!reduced[a]) {
      out_stride[a] = s;
      s *= shape[a];
    }
  }
  const std::size_t n = shape_numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t o = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = o;
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      o += out_stride[a];
      if (idx[a] < shape[a]) break;
      o -= out_stride[a] * idx[a];
      idx[a] = 0;
    }
  }
  return map;
}

// Gradient for an operand that may have been scalar-broadcast against the output.
Tensor unbroadcast(const Tensor& g, const Shape& operand_shape) {
  if (g.shape() == operand_shape) return g;
  double s = 0.0;
  for (double v : g.data()) s += v;
  return Tensor(operand_shape, s);
}

}  // namespace

std::string_view to_string(Precision p) {
  return p == Precision::float32 ? "single" : "double";
}

Precision parse_precision(std::string_view s) {
  if (s == "single" || s == "float32") return Precision::float32;
  if (s == "double" || s == "float64") return Precision::float64;
  throw ConfigError("unknown precision '" + std::string(s) + "'");
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::conv2d: return "conv2d";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::relu: return "relu";
    case OpKind::gelu: return "gelu";
    case OpKind::add_bias: return "add_bias";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::reduce_max: return "reduce_max";
    case OpKind::avgpool2d: return "avgpool2d";
    case OpKind::softmax: return "softmax";
    case OpKind::pick: return "pick";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::grouped_matmul: return "grouped_matmul";
    case OpKind::max_relative: return "max_relative";
    case OpKind::mean_aggregate: return "mean_aggregate";
  }
  return "unknown";
}

void Tape::round_if_single(Tensor& t) const {
  if (precision_ != Precision::float32) return;
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

void Tape::check_writable() const {
  if (consumed_) throw StateError("tape already consumed by backward()");
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw StateError("variable id " + std::to_string(v.id) + " is not on this tape");
  }
  return nodes_[v.id];
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value,
                 BackwardFn backward) {
  check_writable();
  bool rg = false;
  for (std::size_t id : inputs) {
    if (id >= nodes_.size()) throw StateError("input id " + std::to_string(id) + " not on tape");
    rg = rg || nodes_[id].requires_grad;
  }
  round_if_single(value);
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), rg,
                        rg ? std::move(backward) : BackwardFn{}});
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_writable();
  round_if_single(value);
  nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), requires_grad, {}});
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
OpKind Tape::kind(Var v) const { return node(v).kind; }
std::span<const std::size_t> Tape::inputs(Var v) const { return node(v).inputs; }

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  auto& slot = grads_[id];
  if (!slot) {
    slot = g;
    return;
  }
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = ops::matmul(value(a), value(b));
  return record(OpKind::matmul, {a.id, b.id}, std::move(out),
                [a = a.id, b = b.id](Tape& t, const Tensor& g) {
                  const Tensor& av = t.nodes_[a].value;
                  const Tensor& bv = t.nodes_[b].value;
                  if (t.needs_grad(a)) t.accumulate(a, ops::matmul(g, ops::transpose2d(bv)));
                  if (t.needs_grad(b)) t.accumulate(b, ops::matmul(ops::transpose2d(av), g));
                });
}

Var Tape::transpose(Var x) {
  return record(OpKind::transpose, {x.id}, ops::transpose2d(value(x)),
                [x = x.id](Tape& t, const Tensor& g) { t.accumulate(x, ops::transpose2d(g)); });
}

Var Tape::reshape(Var x, Shape shape) {
  Tensor out = value(x).reshaped(std::move(shape));
  return record(OpKind::reshape, {x.id}, std::move(out), [x = x.id](Tape& t, const Tensor& g) {
    t.accumulate(x, g.reshaped(t.nodes_[x].value.shape()));
  });
}

Var Tape::conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  Tensor out = ops::conv2d(value(input), value(kernel), stride, padding);
  return record(
      OpKind::conv2d, {input.id, kernel.id}, std::move(out),
      [in = input.id, ker = kernel.id, stride, padding](Tape& t, const Tensor& g) {
        const Tensor& x = t.nodes_[in].value;
        const Tensor& k = t.nodes_[ker].value;
        const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
        const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
        const std::size_t oh = g.dim(1), ow = g.dim(2);
        const bool want_x = t.needs_grad(in), want_k = t.needs_grad(ker);
        Tensor gx(want_x ? x.shape() : Shape{});
        Tensor gk(want_k ? k.shape() : Shape{});
        const auto ip = static_cast<std::ptrdiff_t>(padding);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const std::size_t kidx = ((co * cin + ci) * kh + u) * kw + v;
                const double kv = k[kidx];
                double acc = 0.0;
                for (std::size_t y = 0; y < oh; ++y) {
                  const auto iy = static_cast<std::ptrdiff_t>(y * stride + u) - ip;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  const std::size_t irow = (ci * h + static_cast<std::size_t>(iy)) * w;
                  const std::size_t grow = (co * oh + y) * ow;
                  for (std::size_t xx = 0; xx < ow; ++xx) {
                    const auto ix = static_cast<std::ptrdiff_t>(xx * stride + v) - ip;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    const double gv = g[grow + xx];
                    if (want_k) acc += gv * x[irow + static_cast<std::size_t>(ix)];
                    if (want_x) gx[irow + static_cast<std::size_t>(ix)] += gv * kv;
                  }
                }
                if (want_k) gk[kidx] = acc;
              }
        if (want_x) t.accumulate(in, gx);
        if (want_k) t.accumulate(ker, gk);
      });
}

Var Tape::add(Var a, Var b) {
  return record(OpKind::add, {a.id, b.id}, ops::add(value(a), value(b)),
                [a = a.id, b = b.id](Tape& t, const Tensor& g) {
                  t.accumulate(a, unbroadcast(g, t.nodes_[a].value.shape()));
                  t.accumulate(b, unbroadcast(g, t.nodes_[b].value.shape()));
                });
}

Var Tape::sub(Var a, Var b) {
  return record(OpKind::sub, {a.id, b.id}, ops::sub(value(a), value(b)),
                [a = a.id, b = b.id](Tape& t, const Tensor& g) {
                  t.accumulate(a, unbroadcast(g, t.nodes_[a].value.shape()));
                  if (t.needs_grad(b)) {
                    t.accumulate(b, unbroadcast(ops::scale(g, -1.0), t.nodes_[b].value.shape()));
                  }
                });
}

Var Tape::mul(Var a, Var b) {
  return record(OpKind::mul, {a.id, b.id}, ops::mul(value(a), value(b)),
                [a = a.id, b = b.id](Tape& t, const Tensor& g) {
                  const Tensor& av = t.nodes_[a].value;
                  const Tensor& bv = t.nodes_[b].value;
                  if (t.needs_grad(a)) t.accumulate(a, unbroadcast(ops::mul(g, bv), av.shape()));
                  if (t.needs_grad(b)) t.accumulate(b, unbroadcast(ops::mul(g, av), bv.shape()));
                });
}

Var Tape::scale(Var x, double factor) {
  return record(OpKind::scale, {x.id}, ops::scale(value(x), factor),
                [x = x.id, factor](Tape& t, const Tensor& g) {
                  t.accumulate(x, ops::scale(g, factor));
                });
}

Var Tape::relu(Var x) {
  return record(OpKind::relu, {x.id}, ops::relu(value(x)), [x = x.id](Tape& t, const Tensor& g) {
    const Tensor& xv = t.nodes_[x].value;
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
    t.accumulate(x, gx);
  });
}

Var Tape::gelu(Var x) {
  return record(OpKind::gelu, {x.id}, ops::gelu(value(x)), [x = x.id](Tape& t, const Tensor& g) {
    const Tensor& xv = t.nodes_[x].value;
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] = g[i] * ops::gelu_derivative(xv[i]);
    t.accumulate(x, gx);
  });
}

Var Tape::add_bias(Var x, Var bias) {
  return record(OpKind::add_bias, {x.id, bias.id}, ops::add_bias(value(x), value(bias)),
                [x = x.id, b = bias.id](Tape& t, const Tensor& g) {
                  t.accumulate(x, g);
                  if (!t.needs_grad(b)) return;
                  Tensor gb(t.nodes_[b].value.shape());
                  if (g.rank() == 2) {
                    const std::size_t d = g.dim(1);
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i % d] += g[i];
                  } else {
                    const std::size_t plane = g.dim(1) * g.dim(2);
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i / plane] += g[i];
                  }
                  t.accumulate(b, gb);
                });
}

Var Tape::reduce(ops::Reduce op, Var x, const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> argmax;
  Tensor out = ops::reduce(op, value(x), axes, op == ops::Reduce::max ? &argmax : nullptr);
  const OpKind kind = op == ops::Reduce::sum    ? OpKind::reduce_sum
                      : op == ops::Reduce::mean ? OpKind::reduce_mean
                                                : OpKind::reduce_max;
  if (op == ops::Reduce::max) {
    return record(kind, {x.id}, std::move(out),
                  [x = x.id, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
                    Tensor gx(t.nodes_[x].value.shape());
                    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
                    t.accumulate(x, gx);
                  });
  }
  const double factor =
      op == ops::Reduce::mean
          ? static_cast<double>(out.numel()) / static_cast<double>(value(x).numel())
          : 1.0;
  return record(kind, {x.id}, std::move(out), [x = x.id, axes, factor](Tape& t, const Tensor& g) {
    const Shape& shape = t.nodes_[x].value.shape();
    const auto map = reduce_index_map(shape, axes);
    Tensor gx(shape);
    for (std::size_t i = 0; i < map.size(); ++i) gx[i] = g[map[i]] * factor;
    t.accumulate(x, gx);
  });
}

Var Tape::avgpool2d(Var x, std::size_t out_h, std::size_t out_w) {
  return record(OpKind::avgpool2d, {x.id}, ops::avgpool2d(value(x), out_h, out_w),
                [x = x.id](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.nodes_[x].value;
                  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
                  const std::size_t oh = g.dim(1), ow = g.dim(2);
                  const std::size_t wh = h / oh, ww = w / ow;
                  const double inv = 1.0 / static_cast<double>(wh * ww);
                  Tensor gx(xv.shape());
                  for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < h; ++y)
                      for (std::size_t xx = 0; xx < w; ++xx)
                        gx.at(ch, y, xx) = g.at(ch, y / wh, xx / ww) * inv;
                  t.accumulate(x, gx);
                });
}

Var Tape::softmax(Var logits) {
  Tensor out = ops::softmax(value(logits));
  const Var result = record(OpKind::softmax, {logits.id}, std::move(out), {});
  // The saved output is this node's own value; look it up lazily at backward time.
  if (nodes_[result.id].requires_grad) {
    nodes_[result.id].backward = [x = logits.id, self = result.id](Tape& t, const Tensor& g) {
      const Tensor& s = t.nodes_[self].value;
      double dot = 0.0;
      for (std::size_t i = 0; i < s.numel(); ++i) dot += g[i] * s[i];
      Tensor gx(s.shape());
      for (std::size_t i = 0; i < s.numel(); ++i) gx[i] = s[i] * (g[i] - dot);
      t.accumulate(x, gx);
    };
  }
  return result;
}

Var Tape::pick(Var x, std::size_t flat_index) {
  const Tensor& xv = value(x);
  if (flat_index >= xv.numel()) {
    throw DomainError("pick: index " + std::to_string(flat_index) + " out of range for " +
                      shape_str(xv.shape()));
  }
  return record(OpKind::pick, {x.id}, Tensor::scalar(xv[flat_index]),
                [x = x.id, flat_index](Tape& t, const Tensor& g) {
                  Tensor gx(t.nodes_[x].value.shape());
                  gx[flat_index] = g[0];
                  t.accumulate(x, gx);
                });
}

Var Tape::cross_entropy(Var logits, std::size_t label) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 1) throw DimensionError("cross_entropy: logits must be rank 1");
  if (label >= lv.numel()) {
    throw DomainError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                      std::to_string(lv.numel()) + ")");
  }
  Tensor probs = ops::softmax(lv);
  const double loss = -std::log(std::max(probs[label], 1e-300));
  return record(OpKind::cross_entropy, {logits.id}, Tensor::scalar(loss),
                [x = logits.id, label, probs = std::move(probs)](Tape& t, const Tensor& g) {
                  Tensor gx = probs;
                  gx[label] -= 1.0;
                  t.accumulate(x, ops::scale(gx, g[0]));
                });
}

Var Tape::grouped_matmul(Var x, Var weight) {
  return record(OpKind::grouped_matmul, {x.id, weight.id},
                ops::grouped_matmul(value(x), value(weight)),
                [x = x.id, w = weight.id](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.nodes_[x].value;
                  const Tensor& wv = t.nodes_[w].value;
                  const std::size_t n = xv.dim(0), groups = wv.dim(0), a = wv.dim(1),
                                    b = wv.dim(2);
                  const bool want_x = t.needs_grad(x), want_w = t.needs_grad(w);
                  Tensor gx(want_x ? xv.shape() : Shape{});
                  Tensor gw(want_w ? wv.shape() : Shape{});
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t gi = 0; gi < groups; ++gi)
                      for (std::size_t p = 0; p < a; ++p) {
                        const std::size_t xi = i * groups * a + gi * a + p;
                        double acc = 0.0;
                        for (std::size_t q = 0; q < b; ++q) {
                          const double gv = g[i * groups * b + gi * b + q];
                          const std::size_t wi = (gi * a + p) * b + q;
                          if (want_x) acc += gv * wv[wi];
                          if (want_w) gw[wi] += xv[xi] * gv;
                        }
                        if (want_x) gx[xi] = acc;
                      }
                  if (want_x) t.accumulate(x, gx);
                  if (want_w) t.accumulate(w, gw);
                });
}

Var Tape::max_relative(Var x, const PatchGraph& graph) {
  std::vector<std::size_t> argmax;
  Tensor out = aggregate_max_relative(value(x), graph, &argmax);
  return record(OpKind::max_relative, {x.id}, std::move(out),
                [x = x.id, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
                  const Tensor& xv = t.nodes_[x].value;
                  const std::size_t n = xv.dim(0), d = xv.dim(1);
                  Tensor gx(xv.shape());
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t c = 0; c < d; ++c) {
                      const double self = g[i * 2 * d + c];
                      const double rel = g[i * 2 * d + d + c];
                      gx[i * d + c] += self + rel;
                      gx[argmax[i * d + c] * d + c] -= rel;
                    }
                  t.accumulate(x, gx);
                });
}

Var Tape::mean_aggregate(Var x, const PatchGraph& graph, DegreeNorm norm) {
  const Tensor& xv = value(x);
  Tensor agg = aggregate_mean(xv, graph, norm);
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({n, 2 * d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      out[i * 2 * d + c] = xv[i * d + c];
      out[i * 2 * d + d + c] = agg[i * d + c];
    }
  return record(OpKind::mean_aggregate, {x.id}, std::move(out),
                [x = x.id, graph, norm](Tape& t, const Tensor& g) {
                  const std::size_t n = graph.n_vertices, d = g.dim(1) / 2;
                  Tensor gx({n, d});
                  Tensor gy({n, d});
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t c = 0; c < d; ++c) {
                      gx[i * d + c] = g[i * 2 * d + c];
                      gy[i * d + c] = g[i * 2 * d + d + c];
                    }
                  // The normalized operator is symmetric in its weights, so the adjoint
                  // scatters each row's gradient back to its neighbors with the same weight.
                  for (std::size_t i = 0; i < n; ++i) {
                    const double di = static_cast<double>(graph.degrees[i]);
                    for (std::size_t j : graph.neighbors(i)) {
                      const double dj = static_cast<double>(graph.degrees[j]);
                      const double w = norm == DegreeNorm::inverse_sqrt ? 1.0 / std::sqrt(di * dj)
                                                                        : std::sqrt(di * dj);
                      for (std::size_t c = 0; c < d; ++c) gx[j * d + c] += w * gy[i * d + c];
                    }
                  }
                  t.accumulate(x, gx);
                });
}

void Tape::backward(Var root) {
  const Tensor& rv = value(root);
  if (rv.numel() != 1) {
    throw DimensionError("backward: root " + shape_str(rv.shape()) +
                         " is not scalar; supply a seed gradient");
  }
  backward(root, Tensor(rv.shape(), 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (consumed_) throw StateError("backward() called twice on the same tape");
  const Node& r = node(root);
  if (seed.shape() != r.value.shape()) {
    throw DimensionError("backward: seed " + shape_str(seed.shape()) + " vs root " +
                         shape_str(r.value.shape()));
  }
  consumed_ = true;
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[root.id] = seed;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    if (!grads_[id]) continue;
    round_if_single(*grads_[id]);
    if (nodes_[id].backward) nodes_[id].backward(*this, *grads_[id]);
  }
}

bool Tape::has_grad(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!consumed_) throw StateError("grad() requested before backward()");
  if (grads_[v.id]) return *grads_[v.id];
  return Tensor(n.value.shape());
}

}  // namespace vscam
