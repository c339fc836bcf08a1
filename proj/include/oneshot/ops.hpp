#pragma once

#include <cstddef>
#include <span>

#include "oneshot/tensor.hpp"

// Differentiable operations. Every op validates shapes (ShapeError), rejects
// non-finite results (NumericError), and records itself on the tape when any
// input requires a gradient.

namespace oneshot {

// Elementwise. Binary ops accept equal shapes, or one operand holding a single value.
Tensor add(Tape& tape, const Tensor& x, const Tensor& y);
Tensor sub(Tape& tape, const Tensor& x, const Tensor& y);
Tensor mul(Tape& tape, const Tensor& x, const Tensor& y);

/// Subgradient at 0 is 0.
Tensor relu(Tape& tape, const Tensor& x);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope);
Tensor square(Tape& tape, const Tensor& x);
Tensor sqrt(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor scale(Tape& tape, const Tensor& x, double factor);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// Call before running ops from several threads; Eigen initializes its GEMM
// cache sizes lazily and asks for this before concurrent use.
void prepare_threads();

/// Adds bias[c] to every element whose axis-1 index is c. x has rank >= 2.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);

/// Max-subtracted softmax along `axis`.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);
Tensor log_softmax(Tape& tape, const Tensor& x, std::size_t axis);

/// Sum of all elements as a rank-0 tensor.
Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

/// Euclidean norm over the last axis. The forward value is exact; the
/// gradient uses x / (||x|| + eps) so it stays finite at the origin.
Tensor vector_norm(Tape& tape, const Tensor& x, double eps = 1e-8);

Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

/// out[b] = x[b, index[b]] for x of shape [B, K].
Tensor pick(Tape& tape, const Tensor& x, std::span<const std::size_t> index);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a convolution/pool along one axis; throws ShapeError if < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Cross-correlation of x[N,C,H,W] with weight[O,C,KH,KW] plus bias[O].
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dGeometry geometry);

/// Max over window x window patches of x[N,C,H,W]. Gradient goes to the first
/// maximal element of each window in row-major order.
Tensor maxpool2d(Tape& tape, const Tensor& x, std::size_t window, std::size_t stride);

}  // namespace oneshot
