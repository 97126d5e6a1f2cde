#include "fmvit/nn.hpp"

#include <cmath>
#include <string>

#include "fmvit/ops.hpp"

namespace fmvit {

namespace {
constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::acos(-1.0));
}  // namespace

double truncated_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  double z = dist(rng);
  while (std::abs(z) > 2.0) z = dist(rng);
  return z * stddev;
}

LinearParams make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng, double stddev) {
  std::vector<double> w(in * out);
  for (auto& v : w) v = truncated_normal(rng, stddev);
  return {Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

LayerNormParams make_layer_norm(std::size_t dim) {
  return {Tensor::ones({dim}, true), Tensor::zeros({dim}, true), 1e-5};
}

MlpParams make_mlp(std::size_t dim, std::size_t hidden, std::mt19937_64& rng) {
  MlpParams p{make_linear(dim, hidden, rng), {}};
  p.fc2 = make_linear(hidden, dim, rng);
  return p;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  if (x.rank() != 2) throw ShapeError("layer_norm needs [N x D], got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (p.gamma.numel() != d || p.beta.numel() != d) {
    throw ShapeError("layer_norm: feature size " + std::to_string(d) + " does not match parameters of size " +
                     std::to_string(p.gamma.numel()));
  }
  if (!(p.eps > 0.0)) throw DomainError("layer_norm eps must be positive");

  std::vector<double> out(rows * d), xhat(rows * d), inv_std(rows);
  auto in = x.data();
  auto gamma = p.gamma.data();
  auto beta = p.beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + p.eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      xhat[r * d + j] = h;
      out[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, p.gamma, p.beta},
                     [gamma_t = p.gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](
                         std::span<const double> g, GradSpans& gin) {
                       auto gamma = gamma_t.data();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gr = g.data() + r * d;
                         const double* hr = xhat.data() + r * d;
                         if (!gin[1].empty())
                           for (std::size_t j = 0; j < d; ++j) gin[1][j] += gr[j] * hr[j];
                         if (!gin[2].empty())
                           for (std::size_t j = 0; j < d; ++j) gin[2][j] += gr[j];
                         if (gin[0].empty()) continue;
                         double sum_dh = 0.0, sum_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = gr[j] * gamma[j];
                           sum_dh += dh;
                           sum_dh_h += dh * hr[j];
                         }
                         const double dd = static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = gr[j] * gamma[j];
                           gin[0][r * d + j] += inv_std[r] / dd * (dd * dh - sum_dh - hr[j] * sum_dh_h);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const LinearParams& p) { return add_rowwise(matmul(x, p.weight), p.bias); }

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double mx = row[0];
    bool any_selected = false;
    for (std::size_t j = 0; j < cols; ++j) {
      mx = std::max(mx, row[j]);
      any_selected = any_selected || row[j] > kMaskedLogit;
    }
    if (!any_selected) {
      throw DomainError("softmax row " + std::to_string(r) + " has every entry masked (empty selection)");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = std::exp(row[j] - mx);
      total += out[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= total;
  }
  std::vector<double> probs = out;
  return make_result(x.shape(), std::move(out), {x},
                     [probs = std::move(probs), rows, cols](std::span<const double> g, GradSpans& gin) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* p = probs.data() + r * cols;
                         const double* gr = g.data() + r * cols;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * p[j];
                         for (std::size_t j = 0; j < cols; ++j) gin[0][r * cols + j] += p[j] * (gr[j] - dot);
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = in[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x}, [x](std::span<const double> g, GradSpans& gin) {
    auto in = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in[i];
      const double t = std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v));
      const double dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
      gin[0][i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Tensor gelu_mlp(const Tensor& x, const MlpParams& p) {
  if (x.rank() != 2 || x.dim(1) != p.fc1.in_features() || p.fc2.out_features() != x.dim(1) ||
      p.fc1.out_features() != p.fc2.in_features()) {
    throw ShapeError("gelu_mlp: input " + to_string(x.shape()) + " does not match hidden layer " +
                     to_string(p.fc1.weight.shape()) + " / " + to_string(p.fc2.weight.shape()));
  }
  return linear(gelu(linear(x, p.fc1)), p.fc2);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor bce_with_logit(const Tensor& logits, std::span<const int> labels) {
  if (logits.numel() != labels.size()) {
    throw ShapeError("bce_with_logit: " + std::to_string(logits.numel()) + " logits vs " +
                     std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  auto l = logits.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw DomainError("label must be 0 (attack) or 1 (bonafide), got " + std::to_string(labels[i]));
    }
    total += softplus(l[i]) - static_cast<double>(labels[i]) * l[i];
  }
  const double n = static_cast<double>(labels.size());
  std::vector<int> y(labels.begin(), labels.end());
  return make_result({1}, {total / n}, {logits}, [logits, y = std::move(y), n](std::span<const double> g, GradSpans& gin) {
    auto l = logits.data();
    for (std::size_t i = 0; i < y.size(); ++i) gin[0][i] += g[0] * (sigmoid(l[i]) - static_cast<double>(y[i])) / n;
  });
}

}  // namespace fmvit
