#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace s2v {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool is_leaf = true;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

// Dense row-major real array with an optional gradient. Copies share the
// underlying storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t extent(int axis) const;
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access. Only meaningful for leaves (inputs, parameters).
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;  // detached deep copy
  Tensor detach() const { return clone(); }
  bool all_finite() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Append-only record of differentiable operations. Operations record onto the
// tape active on the calling thread (see TapeScope) whenever one of their
// inputs requires a gradient.
class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  void record(Node node);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(output)/d(output) = 1 for a scalar output, or uses `seed` for
  // a non-scalar one, then propagates to every requires_grad leaf.
  void backward(const Tensor& output);
  void backward(const Tensor& output, std::span<const double> seed);

  static Tape* active();

 private:
  std::vector<Node> nodes_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on this thread (inference, metric evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

// Creates the result tensor of an op and, when required, records a node whose
// backward reads out->grad and accumulates into the inputs' gradients.
// Throws NumericError naming `op` if any produced value is NaN/Inf.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& out)> backward);

// Gradient buffer of `t` if it takes part in backward, else nullptr.
double* grad_sink(const Tensor& t);

}  // namespace detail

}  // namespace s2v
