#include "supforge/tensor.hpp"

#include <cmath>
#include <sstream>

namespace supforge {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() needs a single element, shape is " +
                     shape_str(shape()));
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tape::record(Node node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (consumed_) {
    throw std::logic_error("tape already replayed; reset() before reuse");
  }
  if (nodes_.empty()) {
    throw std::logic_error("backward on an empty tape");
  }
  consumed_ = true;
  for (auto& node : nodes_) {
    node.output->grad.clear();
    for (auto& in : node.inputs) in->grad.clear();
  }
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from loss
    it->backward(it->output->grad);
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

TapeGuard::TapeGuard(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeGuard::~TapeGuard() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

namespace detail {

double* grad_sink(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl->requires_grad) return nullptr;
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad.data();
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(const std::vector<double>&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = g_active_tape;
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  Tape::Node node;
  for (const auto& in : inputs) node.inputs.push_back(in.impl());
  node.output = out.impl();
  node.backward = std::move(backward);
  tape->record(std::move(node));
  return out;
}

}  // namespace detail

}  // namespace supforge
