#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fmvit/tensor.hpp"

namespace fmvit {

// Linear algebra. Matrices are rank-2.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise. Binary ops need identical shapes; no implicit broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws DomainError on any entry <= 0.
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);

/// x[N x D] + b broadcast over rows; b has D entries (shape [D] or [1 x D]).
Tensor add_rowwise(const Tensor& x, const Tensor& b);

// Structure.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduces `axis` away (the output drops that axis; a rank-1 input yields [1]).
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);

}  // namespace fmvit
