#include "fmvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fmvit {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (shape.empty()) throw ShapeError("tensor needs at least one axis");
  if (numel_of(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a matrix, got " + to_string(shape()));
  if (row >= shape()[0] || col >= shape()[1]) throw ShapeError("index out of range");
  return impl_->data[row * shape()[1] + col];
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, requires_grad()); }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

// ---------------------------------------------------------------------------

Tensor GradientMap::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape());
  return Tensor(leaf.shape(), it->second);
}

bool GradientMap::contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }

Tape::Tape() = default;
Tape::~Tape() = default;

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

NoGrad::NoGrad() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGrad::~NoGrad() { g_active_tape = previous_; }

std::size_t Tape::op_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return bool(n.backward); }));
}

std::size_t Tape::node_of(const Tensor& t) const {
  auto it = ids_.find(t.id());
  return it == ids_.end() ? npos : it->second;
}

std::size_t Tape::intern(const Tensor& t) {
  auto [it, inserted] = ids_.emplace(t.id(), nodes_.size());
  if (inserted) nodes_.push_back(Node{t.impl(), {}, {}});
  return it->second;
}

void Tape::record(std::span<const Tensor> inputs, const Tensor& output, BackwardFn backward) {
  Node node{output.impl(), {}, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.requires_grad() ? intern(in) : npos);
  if (ids_.count(output.id())) throw std::logic_error("tensor recorded twice on one tape");
  ids_.emplace(output.id(), nodes_.size());
  nodes_.push_back(std::move(node));
}

GradientMap Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + to_string(loss.shape()));
  }
  GradientMap result;
  const std::size_t root = node_of(loss);
  if (root == npos) {
    if (loss.requires_grad()) result.grads_[loss.id()] = {1.0};
    return result;
  }

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[root] = {1.0};
  GradSpans spans;
  for (std::size_t id = root + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.backward || grads[id].empty()) continue;
    spans.assign(node.inputs.size(), std::span<double>{});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (in == npos) continue;
      if (grads[in].empty()) grads[in].assign(nodes_[in].tensor->data.size(), 0.0);
      spans[k] = grads[in];
    }
    node.backward(grads[id], spans);
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.backward || !node.tensor->requires_grad) continue;
    auto& g = grads[id];
    if (g.empty()) g.assign(node.tensor->data.size(), 0.0);
    result.grads_[node.tensor.get()] = std::move(g);
  }
  return result;
}

// ---------------------------------------------------------------------------

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward) {
  return make_result(std::move(shape), std::move(data),
                     std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                   BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw DomainError("non-finite value produced by tensor op");
  }
  Tape* tape = Tape::active();
  const bool track =
      tape && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  Tensor out(std::move(shape), std::move(data), track);
  if (track) tape->record(inputs, out, std::move(backward));
  return out;
}

}  // namespace fmvit
