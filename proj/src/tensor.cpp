#include "s2v/tensor.hpp"

#include <cmath>
#include <sstream>

#include "s2v/errors.hpp"

namespace s2v {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
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

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(numel(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

std::size_t Tensor::extent(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis out of range for " + shape_str(shape()));
  return impl_->shape[a];
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tape::record(Node node) { nodes_.push_back(std::move(node)); }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& output) {
  if (output.size() != 1) {
    throw UsageError("backward on non-scalar output " + shape_str(output.shape()) +
                     " requires an explicit seed");
  }
  const double one = 1.0;
  backward(output, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& output, std::span<const double> seed) {
  if (seed.size() != output.size()) {
    throw DimensionError("backward seed has " + std::to_string(seed.size()) +
                         " values for output " + shape_str(output.shape()));
  }
  auto& root = *output.impl();
  if (!root.requires_grad) {
    throw UsageError("backward on a tensor that does not require grad");
  }
  auto& g = root.grad_buffer();
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
  // Interior gradients are per-seed scratch; leaves keep accumulating.
  for (auto& node : nodes_) node.output->grad.clear();
  if (!root.is_leaf) root.grad.clear();

  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (!in->is_leaf) continue;
      for (double v : in->grad) {
        if (!std::isfinite(v)) throw NumericError("non-finite gradient after backward");
      }
    }
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& out)> backward) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;

  auto out_impl = out.impl();
  out_impl->requires_grad = true;
  out_impl->is_leaf = false;
  Tape::Node node;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.impl());
  node.output = out_impl;
  // The output is captured weakly through the node; the tape owns it.
  TensorImpl* raw = out_impl.get();
  node.backward = [raw, fn = std::move(backward)]() { fn(*raw); };
  tape->record(std::move(node));
  return out;
}

double* grad_sink(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return t.impl()->grad_buffer().data();
}

}  // namespace detail

}  // namespace s2v
