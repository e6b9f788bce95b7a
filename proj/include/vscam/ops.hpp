#pragma once

// Forward kernels on plain tensors. These never touch a tape; Tape wraps them and
// records the matching backward rules.

#include <cstddef>
#include <vector>

#include "vscam/tensor.hpp"

namespace vscam::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);

/// Cross-correlation (no kernel flip) of a C_in x H x W input with a C_out x C_in x k x k kernel.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

// Elementwise. Shapes must match exactly, or one side must hold a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

double gelu(double x);
double gelu_derivative(double x);

/// Adds b along the feature axis: columns of an N x D matrix, or channels of a C x H x W grid.
Tensor add_bias(const Tensor& x, const Tensor& b);

enum class Reduce { sum, mean, max };

/// Reduces over `axes` (all axes when empty) and drops them from the shape.
/// For max, `argmax` (if given) receives the flat input index chosen for each output element;
/// ties go to the lowest flat index.
Tensor reduce(Reduce op, const Tensor& x, const std::vector<std::size_t>& axes,
              std::vector<std::size_t>* argmax = nullptr);

/// Non-overlapping window means of a C x H x W grid down to C x out_h x out_w.
Tensor avgpool2d(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Softmax of a rank-1 tensor.
Tensor softmax(const Tensor& logits);

/// x[N x G*a] times per-group weights w[G x a x b] -> N x G*b.
Tensor grouped_matmul(const Tensor& x, const Tensor& w);

}  // namespace vscam::ops
