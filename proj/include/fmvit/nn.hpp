#pragma once

#include <cstddef>
#include <random>
#include <span>

#include "fmvit/tensor.hpp"

namespace fmvit {

/// Logit written in place of a deselected attention score. Finite so every
/// downstream op stays finite; exp(kMaskedLogit - max) underflows to 0.
inline constexpr double kMaskedLogit = -1e9;

struct LinearParams {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNormParams {
  Tensor gamma;  // [D]
  Tensor beta;   // [D]
  double eps = 1e-5;
};

struct MlpParams {
  LinearParams fc1;  // D -> r*D
  LinearParams fc2;  // r*D -> D
};

// Initializers. Weights draw from a normal with stddev 0.02 truncated at two
// standard deviations; biases and beta start at zero, gamma at one.
double truncated_normal(std::mt19937_64& rng, double stddev);
LinearParams make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng, double stddev = 0.02);
LayerNormParams make_layer_norm(std::size_t dim);
MlpParams make_mlp(std::size_t dim, std::size_t hidden, std::mt19937_64& rng);

Tensor layer_norm(const Tensor& x, const LayerNormParams& p);
Tensor linear(const Tensor& x, const LinearParams& p);

/// Row-wise softmax over the last axis with max subtraction. A row whose
/// entries are all kMaskedLogit has nothing selected and is rejected.
Tensor softmax_lastdim(const Tensor& x);

/// tanh-approximated GELU.
Tensor gelu(const Tensor& x);
Tensor gelu_mlp(const Tensor& x, const MlpParams& p);

/// Mean binary cross-entropy of sigmoid(logits) against labels in {0, 1},
/// evaluated as softplus so large logits never overflow.
Tensor bce_with_logit(const Tensor& logits, std::span<const int> labels);

double sigmoid(double x);
double softplus(double x);

}  // namespace fmvit
