#pragma once

#include <span>
#include <vector>

#include "sdfn/autodiff.hpp"

// Differentiable primitives. Matrices are rank-2 [rows x cols]; rank-1
// tensors act as a single row wherever broadcasting applies. Broadcasting
// only duplicates a missing or 1-length leading axis.
namespace sdfn {

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// x · wᵀ + b with w stored [out x in]; `bias` may be an invalid Var.
Var linear(Var x, Var weight, Var bias = {});

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a scaled by a one-element tensor.
Var mul_scalar(Var a, Var s);
/// Σ_i weights[i] · xs[i] over equally shaped tensors.
Var weighted_sum(std::span<const Var> xs, Var weights);

Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);
Var sum_axis(Var a, std::size_t axis);
Var mean_axis(Var a, std::size_t axis);
Var max_axis(Var a, std::size_t axis);

/// Channel (last-axis) concatenation. Rank-1 parts broadcast over the rows of
/// the rank-2 parts.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t start, std::size_t length);
Var row(Var a, std::size_t index);
Var stack_rows(const std::vector<Var>& rows);
Var element(Var a, std::size_t index);
Var reshape(Var a, Shape shape);

Var softmax(Var a, std::size_t axis);
Var log_softmax(Var a, std::size_t axis);
/// Normalizes over the last axis; gain and bias are rank-1 of that length.
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var l2_normalize_rows(Var a);
/// sqrt(Σ a²); the gradient at the origin is taken as zero.
Var frobenius_norm(Var a);

}  // namespace sdfn

namespace sdfn {

/// Rows of `table` selected by `indices` -> [indices.size() x cols].
Var gather_rows(Var table, std::span<const std::size_t> indices);

}  // namespace sdfn
