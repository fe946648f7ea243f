#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "advlat/autodiff.hpp"

namespace advlat {

enum class Elementwise { add, sub, mul, div, relu, tanh, sigmoid, exp, log, softplus, scale, sqrt, square, neg };

/// Elementwise kernel. Binary kinds take `b` with an equal shape, or either
/// operand may be a single-element tensor broadcast over the other.
/// `scale` multiplies `a` by `factor`.
Var elementwise(Elementwise kind, const Var& a, std::optional<Var> b = std::nullopt, double factor = 1.0);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double c);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
/// Throws DomainError unless every entry is strictly positive.
Var log(const Var& a);
Var softplus(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var neg(const Var& a);
/// Clamp to [lo, hi]; gradient passes only where the input was inside.
Var clamp(const Var& a, double lo, double hi);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Concatenate rank-2 tensors along axis 0 (rows) or 1 (columns).
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
/// Row gather; repeated indices accumulate in the backward pass.
Var gather_rows(const Var& a, const std::vector<std::size_t>& rows);
/// a[N x M] + b[M] broadcast over rows.
Var add_row_vector(const Var& a, const Var& b);
/// a[M x N] + b[M] broadcast over columns.
Var add_col_vector(const Var& a, const Var& b);
/// Row i of a[N x M] times the constant factors[i].
Var scale_rows(const Var& a, const std::vector<double>& factors);

enum class Reduce { sum, mean, max };

/// Reduce over all elements (scalar result) or along one axis (axis removed).
Var reduce(Reduce kind, const Var& a, std::optional<std::size_t> axis = std::nullopt);

struct MaxResult {
  Var value;
  /// Flat index into `a` of each maximum (first occurrence wins).
  std::vector<std::size_t> argmax;
};
MaxResult reduce_max(const Var& a, std::optional<std::size_t> axis = std::nullopt);

Var sum(const Var& a);
Var mean(const Var& a);

/// Softmax of logits / temperature along `axis`, with max subtraction.
Var softmax(const Var& logits, std::size_t axis, double temperature = 1.0);

/// Euclidean norm over all entries; gradient at the zero vector is zero.
Var l2_norm(const Var& a);
/// Per-row Euclidean norms of a[N x M] -> [N]; zero rows get zero gradient.
Var row_norms(const Var& a);

/// Angle in [0, pi] between every row of queries[M x d] and every row of
/// keys[V x d] -> [M x V]. Differentiable in the queries; keys are treated
/// as constants. Throws DomainError on a zero row.
Var angular_distances(const Var& queries, const Tensor& keys);

/// Unfold input[C x H x W] into columns [(C*kh*kw) x (oh*ow)] for convolution.
Var im2col(const Var& input, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad);

// Plain tensor kernels shared by ops and reference checks.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
double angle_between(std::span<const double> u, std::span<const double> v);

}  // namespace advlat
