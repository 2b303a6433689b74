#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace supforge {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown when operand extents are incompatible; the message names the dims.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};

/// Dense row-major float64 array. Copies share storage; ops never write
/// into their inputs, so a Tensor behaves as an immutable value except for
/// leaves that the owner updates explicitly through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient from the last backward pass; all zeros when none was recorded.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy that does not participate in autodiff.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool all_finite() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of executed operations. Backward replays adjoints in
/// exact reverse order and may run once per recording.
class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void(const std::vector<double>& grad_out)> backward;
  };

  void record(Node node);
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Installs a tape as the recording target for the current thread.
class TapeGuard {
 public:
  explicit TapeGuard(Tape& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

namespace detail {

/// Accumulation target for an input's gradient, or nullptr when the input
/// does not require one.
double* grad_sink(const std::shared_ptr<TensorImpl>& impl);

/// Wraps `data` into a result tensor and, when recording, registers
/// `backward` against `inputs`.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(const std::vector<double>&)> backward);

}  // namespace detail

}  // namespace supforge
