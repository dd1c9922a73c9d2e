#pragma once

#include <vector>

#include "dsu/tensor.hpp"

namespace dsu {

enum class Ewise { Add, Sub, Mul, Div };
enum class Reduction { Mean, Variance };
enum class Divisor { N, NMinus1 };

/// Pure tensor kernels. Every function returns a fresh tensor, validates
/// shapes/dtypes, and guarantees finite output for finite input (raising
/// NumericalError otherwise). The Graph records these same computations
/// when gradients are wanted.
namespace ops {

/// Elementwise arithmetic. `b` may equal `a`'s shape, be a leading prefix
/// of it (broadcast over the trailing spatial dims, e.g. [B,C] against
/// [B,C,H,W]), or be a 1-D channel vector matching dim 1 (e.g. [C] against
/// [B,C] or [B,C,H,W]). Division raises NumericalError when any
/// denominator magnitude is below division_floor(dtype).
Tensor elementwise(Ewise op, const Tensor& a, const Tensor& b);

/// Mean or population/sample variance over an axis set; reduced axes are
/// removed from the shape (full reduction yields shape [1]).
Tensor reduce(Reduction op, const Tensor& x, const std::vector<int>& axes,
              Divisor divisor = Divisor::N);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);

/// Direct (im2col + GEMM) convolution; x [B,Cin,H,W], w [Cout,Cin,k,k],
/// bias [Cout]. Output spatial size floor((H + 2 pad - k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

Tensor avg_pool(const Tensor& x, int kernel, int stride);
/// [B,C,H,W] -> [B,C]
Tensor global_avg_pool(const Tensor& x);
/// x [B,F] * w [F,O] + bias [O]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// out[i, ...] = x[rows[i], ...]
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
/// Mean over the batch of -log softmax(logits)[label]; returns shape [1].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor sum(const Tensor& x);

/// Row-wise argmax of [B,K] logits.
std::vector<int> argmax_rows(const Tensor& logits);

// Pieces the autodiff backward pass shares with the forward kernels.
namespace detail {

enum class BcastKind { None, Trailing, Channel };

/// Classifies how `b_shape` maps onto `a_shape`; throws ShapeError when
/// incompatible.
BcastKind broadcast_kind(const std::vector<int>& a_shape, const std::vector<int>& b_shape);

/// Sums `g` (shaped like the broadcast output) down to `b_shape`.
Tensor reduce_broadcast_grad(const Tensor& g, BcastKind kind, const std::vector<int>& b_shape);

/// Expands a reduced-axes gradient back to `x_shape`, scaling by `scale`.
Tensor expand_reduce_grad(const Tensor& g, const std::vector<int>& x_shape,
                          const std::vector<int>& axes, double scale);

struct ConvGrads { Tensor gx, gw, gb; };
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout,
                          int stride, int pad);

struct LinearGrads { Tensor gx, gw, gb; };
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& gout);

Tensor avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape,
                         int kernel, int stride);
Tensor global_avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape);
Tensor gather_rows_backward(const Tensor& gout, const std::vector<int>& rows);
Tensor softmax_ce_backward(const Tensor& logits, const std::vector<int>& labels,
                           double gout);

/// into += g (same shape/dtype).
void accumulate(Tensor& into, const Tensor& g);

} // namespace detail
} // namespace ops
} // namespace dsu
