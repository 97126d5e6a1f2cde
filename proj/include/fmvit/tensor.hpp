#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fmvit {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel_of(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major f64 array. Copies share storage; use clone() for a deep copy.
///
/// A tensor produced by an op while a Tape is active (and with at least one
/// input that requires grad) is recorded on that tape. Leaves are tensors
/// created directly by the user with requires_grad = true.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access. Only initializers and optimizers should use this,
  /// and never while a tape holding this tensor is live.
  std::span<double> mutable_data() { return impl_->data; }

  double item() const;
  double at(std::size_t i) const { return impl_->data.at(i); }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  Tensor clone() const;
  /// Same values, new storage, not tracked.
  Tensor detach() const;

  const detail::TensorImpl* id() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Gradient buffers handed to a backward rule, one per input. A span is empty
/// when that input does not need a gradient.
using GradSpans = std::vector<std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSpans& grad_in)>;

class Tape;

/// Result of Tape::backward: gradients keyed by leaf tensor.
class GradientMap {
 public:
  /// Gradient of the loss w.r.t. `leaf`, shaped like it. Zeros if the leaf was
  /// not on any path to the loss.
  Tensor of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const detail::TensorImpl*, std::vector<double>> grads_;
};

/// Define-by-run operation record. Node ids are assigned in creation order,
/// so every op's inputs precede its output.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Makes `tape` the active tape of this thread for the scope's lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  std::size_t size() const { return nodes_.size(); }
  std::size_t op_count() const;

  /// Node id of a tensor on this tape, or npos.
  std::size_t node_of(const Tensor& t) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  void record(std::span<const Tensor> inputs, const Tensor& output, BackwardFn backward);

  /// Reverse-mode sweep from a scalar loss recorded on this tape.
  GradientMap backward(const Tensor& loss) const;

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> tensor;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::size_t intern(const Tensor& t);

  std::vector<Node> nodes_;
  std::unordered_map<const detail::TensorImpl*, std::size_t> ids_;
};

/// Disables recording on this thread for the scope's lifetime.
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape* previous_;
};

/// Builds an op result and records it when a tape is active and any input
/// requires grad. Every differentiable op goes through here.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                   BackwardFn backward);

}  // namespace fmvit
