#include "vscam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vscam/errors.hpp"

namespace vscam::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, const char* what, F f) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (b.numel() == 1) {
    const double s = b[0];
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], s);
    return out;
  }
  if (a.numel() == 1) {
    const double s = a[0];
    Tensor out(b.shape());
    for (std::size_t i = 0; i < b.numel(); ++i) out[i] = f(s, b[i]);
    return out;
  }
  throw DimensionError(std::string(what) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  require_rank(x, 2, "transpose2d");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw DomainError("conv2d: stride must be positive");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " does not match input channels of " + shape_str(input.shape()));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  Tensor out({cout, oh, ow});
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  double* po = out.data().data();
  const auto ip = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t co = 0; co < cout; ++co) {
    double* oplane = po + co * oh * ow;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* iplane = in + ci * h * w;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const double kv = ker[((co * cin + ci) * kh + u) * kw + v];
          for (std::size_t y = 0; y < oh; ++y) {
            const auto iy = static_cast<std::ptrdiff_t>(y * stride + u) - ip;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* irow = iplane + static_cast<std::size_t>(iy) * w;
            double* orow = oplane + y * ow;
            for (std::size_t x = 0; x < ow; ++x) {
              const auto ix = static_cast<std::ptrdiff_t>(x * stride + v) - ip;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              orow[x] += kv * irow[ix];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = gelu(x[i]);
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1) throw DimensionError("add_bias: bias must be rank 1, got " + shape_str(b.shape()));
  Tensor out = x;
  if (x.rank() == 2) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (b.dim(0) != d) {
      throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += b[j];
    return out;
  }
  if (x.rank() == 3) {
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    if (b.dim(0) != c) {
      throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] += b[ch];
    return out;
  }
  throw DimensionError("add_bias: input must be rank 2 or 3, got " + shape_str(x.shape()));
}

Tensor reduce(Reduce op, const Tensor& x, const std::vector<std::size_t>& axes,
              std::vector<std::size_t>* argmax) {
  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, axes.empty());
  for (std::size_t a : axes) {
    if (a >= rank) {
      throw DimensionError("reduce: axis " + std::to_string(a) + " invalid for shape " +
                           shape_str(x.shape()));
    }
    if (reduced[a]) throw DimensionError("reduce: axis " + std::to_string(a) + " repeated");
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t a = 0; a < rank; ++a) {
    if (reduced[a]) {
      if (x.shape()[a] == 0) throw DomainError("reduce: empty reduction axis " + std::to_string(a));
      count *= x.shape()[a];
    } else {
      out_shape.push_back(x.shape()[a]);
    }
  }
  if (x.numel() == 0) throw DomainError("reduce: empty tensor " + shape_str(x.shape()));

  // Stride of each input axis within the output (0 for reduced axes).
  std::vector<std::size_t> out_stride(rank, 0);
  {
    std::size_t s = 1;
    for (std::size_t a = rank; a-- > 0;) {
      if (!reduced[a]) {
        out_stride[a] = s;
        s *= x.shape()[a];
      }
    }
  }
  Tensor out(out_shape, op == Reduce::max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::size_t> best;
  if (op == Reduce::max) best.assign(out.numel(), 0);
  std::vector<bool> seen(op == Reduce::max ? out.numel() : 0, false);

  std::vector<std::size_t> idx(rank, 0);
  std::size_t o = 0;
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    const double v = x[flat];
    if (op == Reduce::max) {
      if (!seen[o] || v > out[o]) {
        out[o] = v;
        best[o] = flat;
        seen[o] = true;
      }
    } else {
      out[o] += v;
    }
    // Advance the multi-index, keeping `o` in sync.
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      o += out_stride[a];
      if (idx[a] < x.shape()[a]) break;
      o -= out_stride[a] * idx[a];
      idx[a] = 0;
    }
  }
  if (op == Reduce::mean) {
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : out.data()) v *= inv;
  }
  if (argmax != nullptr) *argmax = std::move(best);
  return out;
}

Tensor avgpool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "avgpool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0) {
    throw DimensionError("avgpool2d: " + shape_str(x.shape()) + " not divisible into " +
                         std::to_string(out_h) + "x" + std::to_string(out_w) + " windows");
  }
  const std::size_t wh = h / out_h, ww = w / out_w;
  const double inv = 1.0 / static_cast<double>(wh * ww);
  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double s = 0.0;
        for (std::size_t y = oy * wh; y < (oy + 1) * wh; ++y)
          for (std::size_t xx = ox * ww; xx < (ox + 1) * ww; ++xx) s += x.at(ch, y, xx);
        out.at(ch, oy, ox) = s * inv;
      }
  return out;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, "softmax");
  if (logits.numel() == 0) throw DomainError("softmax: empty input");
  const double m = *std::max_element(logits.data().begin(), logits.data().end());
  Tensor out(logits.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out.data()) v /= z;
  return out;
}

Tensor grouped_matmul(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "grouped_matmul input");
  require_rank(w, 3, "grouped_matmul weight");
  const std::size_t n = x.dim(0), groups = w.dim(0), a = w.dim(1), b = w.dim(2);
  if (x.dim(1) != groups * a) {
    throw DimensionError("grouped_matmul: input " + shape_str(x.shape()) +
                         " does not split into weight groups " + shape_str(w.shape()));
  }
  Tensor out({n, groups * b});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * groups * a;
    double* oi = out.data().data() + i * groups * b;
    for (std::size_t g = 0; g < groups; ++g) {
      const double* wg = w.data().data() + g * a * b;
      for (std::size_t p = 0; p < a; ++p) {
        const double xv = xi[g * a + p];
        for (std::size_t q = 0; q < b; ++q) oi[g * b + q] += xv * wg[p * b + q];
      }
    }
  }
  return out;
}

}  // namespace vscam::ops
