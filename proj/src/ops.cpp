#include "fmvit/ops.hpp"

#include <cmath>
#include <string>

namespace fmvit {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " needs a matrix, got " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename F, typename G>
Tensor unary(const Tensor& a, F forward, G derivative) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(x[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [a, derivative](std::span<const double> g, GradSpans& gin) {
                       auto x = a.data();
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * derivative(x[i]);
                     });
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView view_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data(), b.data(), out, m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g, GradSpans& gin) {
    if (!gin[0].empty()) gemm_nt(g, b.data(), gin[0], m, n, k);  // dA = dC B^T
    if (!gin[1].empty()) gemm_tn(a.data(), g, gin[1], m, k, n);  // dB = A^T dC
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](std::span<const double> g, GradSpans& gin) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gin[0][i * c + j] += g[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](std::span<const double> g, GradSpans& gin) {
    for (auto& dst : gin)
      if (!dst.empty())
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](std::span<const double> g, GradSpans& gin) {
    if (!gin[0].empty())
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    if (!gin[1].empty())
      for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g, GradSpans& gin) {
    if (!gin[0].empty())
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * b.data()[i];
    if (!gin[1].empty())
      for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * a.data()[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double) { return 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  for (double v : a.data()) {
    if (v > 700.0) throw DomainError("exp overflow: input " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double x) {
                 const double t = std::tanh(x);
                 return 1.0 - t * t;
               });
}

Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  require_matrix(x, "add_rowwise");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (b.numel() != cols || (b.rank() == 2 && b.dim(0) != 1) || b.rank() > 2) {
    throw ShapeError("add_rowwise: bias " + to_string(b.shape()) + " does not fit rows of " +
                     to_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += b.data()[j];
  return make_result(x.shape(), std::move(out), {x, b}, [rows, cols](std::span<const double> g, GradSpans& gin) {
    if (!gin[0].empty())
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    if (!gin[1].empty())
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gin[1][j] += g[i * cols + j];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape) + " changes size");
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](std::span<const double> g, GradSpans& gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("ragged concat: " + to_string(first) + " vs " + to_string(s));
    out_shape[axis] += s[axis];
  }
  const AxisView ov = view_axis(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * ov.inner;
    auto src = p.data();
    for (std::size_t o = 0; o < ov.outer; ++o)
      std::copy_n(src.begin() + o * chunk, chunk, out.begin() + o * ov.extent * ov.inner + offset * ov.inner);
    offset += p.dim(axis);
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return make_result(std::move(out_shape), std::move(out), parts,
                     [ov, offsets, extents](std::span<const double> g, GradSpans& gin) {
                       for (std::size_t k = 0; k < gin.size(); ++k) {
                         if (gin[k].empty()) continue;
                         const std::size_t chunk = extents[k] * ov.inner;
                         for (std::size_t o = 0; o < ov.outer; ++o) {
                           const double* src = g.data() + o * ov.extent * ov.inner + offsets[k] * ov.inner;
                           double* dst = gin[k].data() + o * chunk;
                           for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisView v = view_axis(a.shape(), axis);
  if (begin >= end || end > v.extent) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds on axis " +
                     std::to_string(axis) + " of " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * v.inner;
  std::vector<double> out(v.outer * chunk);
  auto src = a.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(src.begin() + o * v.extent * v.inner + begin * v.inner, chunk, out.begin() + o * chunk);
  return make_result(std::move(out_shape), std::move(out), {a},
                     [v, begin, chunk](std::span<const double> g, GradSpans& gin) {
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         double* dst = gin[0].data() + o * v.extent * v.inner + begin * v.inner;
                         const double* s = g.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += s[i];
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({1}, {total}, {a}, [](std::span<const double> g, GradSpans& gin) {
    for (auto& d : gin[0]) d += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum(const Tensor& a, std::size_t axis) {
  const AxisView v = view_axis(a.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(v.outer * v.inner, 0.0);
  auto x = a.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += x[(o * v.extent + e) * v.inner + i];
  return make_result(std::move(out_shape), std::move(out), {a}, [v](std::span<const double> g, GradSpans& gin) {
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        for (std::size_t i = 0; i < v.inner; ++i) gin[0][(o * v.extent + e) * v.inner + i] += g[o * v.inner + i];
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const double extent = static_cast<double>(a.dim(axis));
  return scale(sum(a, axis), 1.0 / extent);
}

}  // namespace fmvit
