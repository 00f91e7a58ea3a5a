#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metaprompter/tape.hpp"

/// Differentiable kernels over Tape variables.
///
/// Shapes are always explicit: the only implicit expansion is a scalar factor
/// in scale(). Vectors are rank 1, matrices rank 2. Every kernel throws
/// DimensionError on a shape mismatch.
namespace mpr::ops {

inline constexpr double kCosineEps = 1e-12;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);

/// a[m x k] * b[k x n].
Var matmul(Var a, Var b);
/// a[m x k] * b[n x k]^T.
Var matmul_nt(Var a, Var b);
/// a[m x n] * x[n] -> [m].
Var matvec(Var a, Var x);
Var transpose(Var a);

/// Adds bias[n] to every row of a[m x n].
Var add_row(Var a, Var bias);

/// Stacks matrices (or vectors, as single rows) with equal width.
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Concatenates scalars and vectors into one vector.
Var stack(std::span<const Var> parts);

Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Row r of a matrix as a vector.
Var row(Var a, std::size_t r);
Var reshape(Var a, Shape shape);

/// Mean over the rows of a[m x n] -> [n].
Var mean_rows(Var a);
Var sum(Var a);
Var mean(Var a);
Var dot(Var u, Var v);

/// Rows of table[V x d] at `ids` -> [|ids| x d].
Var gather_rows(Var table, std::span<const std::size_t> ids);
/// Entries of a vector at `ids`.
Var select(Var x, std::span<const std::size_t> ids);

/// Row-wise normalization with learned gain and bias.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Tanh approximation of GELU.
Var gelu(Var x);
Var tanh(Var x);
Var log(Var x);

/// exp(x_i / scale) / sum_j exp(x_j / scale) over a vector.
Var softmax(Var x, double scale = 1.0);
/// softmax applied to every row of a matrix.
Var softmax_rows(Var x, double scale = 1.0);
Var log_softmax(Var x);
/// -logp[target] for a vector of log-probabilities.
Var nll(Var logp, std::size_t target);
/// x / sum(x) for a positive vector.
Var normalize_sum(Var x);

/// u.v / (|u||v|); throws DegenerateVectorError when either norm <= kCosineEps.
Var cosine(Var u, Var v);
/// cosine(row_i(a), h) for every row -> [m].
Var cosine_rows(Var a, Var h);

}  // namespace mpr::ops
