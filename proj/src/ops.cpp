#include "s2v/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "s2v/errors.hpp"
#include "s2v/kernels.hpp"

namespace s2v::ops {

using detail::grad_sink;
using detail::make_result;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  return make_result(name, x.shape(), std::move(out), {x}, [x, deriv](TensorImpl& o) {
    double* gx = grad_sink(x);
    if (gx == nullptr) return;
    const auto xd = x.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * deriv(xd[i], o.data[i]);
  });
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Valid-position box mean of width `window` along one axis.
Tensor box_mean_axis(const Tensor& x, std::size_t window, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis);
  if (window == 0 || window > sp.extent) {
    throw DimensionError("box_mean: window " + std::to_string(window) +
                         " does not fit extent " + std::to_string(sp.extent));
  }
  const std::size_t out_ext = sp.extent - window + 1;
  Shape shape = x.shape();
  shape[axis] = out_ext;
  std::vector<double> out(sp.outer * out_ext * sp.inner, 0.0);
  const auto xd = x.data();
  const double inv = 1.0 / static_cast<double>(window);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < out_ext; ++i)
      for (std::size_t k = 0; k < window; ++k)
        for (std::size_t j = 0; j < sp.inner; ++j)
          out[(o * out_ext + i) * sp.inner + j] += xd[(o * sp.extent + i + k) * sp.inner + j];
  for (auto& v : out) v *= inv;
  return make_result("box_mean", shape, std::move(out), {x},
                     [x, sp, out_ext, window, inv](TensorImpl& o) {
                       double* gx = grad_sink(x);
                       if (gx == nullptr) return;
                       for (std::size_t a = 0; a < sp.outer; ++a)
                         for (std::size_t i = 0; i < out_ext; ++i)
                           for (std::size_t k = 0; k < window; ++k)
                             for (std::size_t j = 0; j < sp.inner; ++j)
                               gx[(a * sp.extent + i + k) * sp.inner + j] +=
                                   o.grad[(a * out_ext + i) * sp.inner + j] * inv;
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [a, b](TensorImpl& o) {
    if (double* ga = grad_sink(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    if (double* gb = grad_sink(b))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [a, b](TensorImpl& o) {
    if (double* ga = grad_sink(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    if (double* gb = grad_sink(b))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [a, b](TensorImpl& o) {
    if (double* ga = grad_sink(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * b[i];
    if (double* gb = grad_sink(b))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * a[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return make_result("div", a.shape(), std::move(out), {a, b}, [a, b](TensorImpl& o) {
    if (double* ga = grad_sink(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] / b[i];
    if (double* gb = grad_sink(b))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i] * o.data[i] / b[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return sigmoid_scalar(v); });
}

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  const double s = std::accumulate(xd.begin(), xd.end(), 0.0);
  return make_result("sum", Shape{1}, {s}, {x}, [x](TensorImpl& o) {
    if (double* gx = grad_sink(x))
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [x](TensorImpl& o) {
    if (double* gx = grad_sink(x))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axis count mismatch");
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) shape[i] = x.shape()[axes[i]];
  const auto in_strides = strides_of(x.shape());
  // For each output position, the matching flat input index.
  std::vector<std::size_t> src(x.size());
  std::vector<std::size_t> coord(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += coord[i] * in_strides[axes[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++coord[i] < shape[i]) break;
      coord[i] = 0;
    }
  }
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[src[i]];
  return make_result("permute", std::move(shape), std::move(out), {x},
                     [x, src = std::move(src)](TensorImpl& o) {
                       if (double* gx = grad_sink(x))
                         for (std::size_t i = 0; i < o.grad.size(); ++i) gx[src[i]] += o.grad[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw DimensionError("concat: extent mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(first));
      }
    }
    shape[axis] += p.shape()[axis];
  }
  const auto sp = split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    const auto pd = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pd.begin() + o * ext * sp.inner, ext * sp.inner,
                  out.begin() + (o * sp.extent + offset) * sp.inner);
    offset += ext;
  }
  return make_result("concat", shape, std::move(out), parts, [parts, axis, sp](TensorImpl& o) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t ext = p.shape()[axis];
      if (double* gp = grad_sink(p)) {
        for (std::size_t a = 0; a < sp.outer; ++a)
          for (std::size_t k = 0; k < ext * sp.inner; ++k)
            gp[a * ext * sp.inner + k] += o.grad[(a * sp.extent + offset) * sp.inner + k];
      }
      offset += ext;
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") invalid for " +
                         shape_str(x.shape()));
  }
  const auto sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<double> out(numel(shape));
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xd.begin() + (o * sp.extent + start) * sp.inner, length * sp.inner,
                out.begin() + o * length * sp.inner);
  return make_result("slice", shape, std::move(out), {x},
                     [x, sp, start, length](TensorImpl& o) {
                       double* gx = grad_sink(x);
                       if (gx == nullptr) return;
                       for (std::size_t a = 0; a < sp.outer; ++a)
                         for (std::size_t k = 0; k < length * sp.inner; ++k)
                           gx[(a * sp.extent + start) * sp.inner + k] +=
                               o.grad[a * length * sp.inner + k];
                     });
}

Tensor pad(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& widths) {
  const std::size_t r = x.rank();
  if (widths.size() != r) throw DimensionError("pad: need one (before, after) pair per axis");
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) shape[i] = x.shape()[i] + widths[i].first + widths[i].second;
  const auto out_strides = strides_of(shape);
  std::vector<std::size_t> dst(x.size());
  std::vector<std::size_t> coord(r, 0);
  for (std::size_t flat = 0; flat < x.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += (coord[i] + widths[i].first) * out_strides[i];
    dst[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++coord[i] < x.shape()[i]) break;
      coord[i] = 0;
    }
  }
  std::vector<double> out(numel(shape), 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < dst.size(); ++i) out[dst[i]] = xd[i];
  return make_result("pad", std::move(shape), std::move(out), {x},
                     [x, dst = std::move(dst)](TensorImpl& o) {
                       if (double* gx = grad_sink(x))
                         for (std::size_t i = 0; i < dst.size(); ++i) gx[i] += o.grad[dst[i]];
                     });
}

Tensor take_last(const Tensor& x, const std::vector<std::size_t>& index) {
  const std::size_t n = x.shape().back();
  for (auto i : index) {
    if (i >= n) throw DimensionError("take_last: index out of range");
  }
  const std::size_t rows = x.size() / n, m = index.size();
  Shape shape = x.shape();
  shape.back() = m;
  std::vector<double> out(rows * m);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = xd[r * n + index[j]];
  return make_result("take_last", std::move(shape), std::move(out), {x},
                     [x, index, rows, n, m](TensorImpl& o) {
                       double* gx = grad_sink(x);
                       if (gx == nullptr) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < m; ++j) gx[r * n + index[j]] += o.grad[r * m + j];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || a.rank() != b.rank()) throw DimensionError("matmul: rank mismatch");
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.shape()[i] != b.shape()[i]) throw DimensionError("matmul: batch extent mismatch");
  }
  const std::size_t m = a.shape()[r - 2], k = a.shape()[r - 1], n = b.shape()[r - 1];
  if (b.shape()[r - 2] != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.size() / (m * k);
  Shape shape = a.shape();
  shape[r - 1] = n;
  std::vector<double> out(batch * m * n);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernels::par::gemm(false, false, m, n, k, a.data().subspan(bi * m * k, m * k),
                       b.data().subspan(bi * k * n, k * n),
                       std::span<double>(out).subspan(bi * m * n, m * n), false);
  }
  return make_result("matmul", std::move(shape), std::move(out), {a, b},
                     [a, b, batch, m, n, k](TensorImpl& o) {
                       double* ga = grad_sink(a);
                       double* gb = grad_sink(b);
                       for (std::size_t bi = 0; bi < batch; ++bi) {
                         const auto g = std::span<const double>(o.grad).subspan(bi * m * n, m * n);
                         if (ga != nullptr)
                           kernels::par::gemm(false, true, m, k, n, g,
                                              b.data().subspan(bi * k * n, k * n),
                                              std::span<double>(ga + bi * m * k, m * k), true);
                         if (gb != nullptr)
                           kernels::par::gemm(true, false, k, n, m,
                                              a.data().subspan(bi * m * k, m * k), g,
                                              std::span<double>(gb + bi * k * n, k * n), true);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.size() != weight.shape()[0]) {
    throw DimensionError("linear: weight must be [Dout,Din] and bias [Dout]");
  }
  const std::size_t dout = weight.shape()[0], din = weight.shape()[1];
  if (x.shape().back() != din) {
    throw DimensionError("linear: trailing extent " + std::to_string(x.shape().back()) +
                         " != " + std::to_string(din));
  }
  const std::size_t rows = x.size() / din;
  Shape shape = x.shape();
  shape.back() = dout;
  std::vector<double> out(rows * dout);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * dout);
  kernels::par::gemm(false, true, rows, dout, din, x.data(), weight.data(), out, true);
  return make_result("linear", std::move(shape), std::move(out), {x, weight, bias},
                     [x, weight, bias, rows, din, dout](TensorImpl& o) {
                       if (double* gx = grad_sink(x))
                         kernels::par::gemm(false, false, rows, din, dout, o.grad, weight.data(),
                                            std::span<double>(gx, rows * din), true);
                       if (double* gw = grad_sink(weight))
                         kernels::par::gemm(true, false, dout, din, rows, o.grad, x.data(),
                                            std::span<double>(gw, dout * din), true);
                       if (double* gb = grad_sink(bias))
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < dout; ++j) gb[j] += o.grad[r * dout + j];
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              const Conv2dOptions& opts) {
  if (x.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expects input [N,C,H,W] and kernel [O,C,kh,kw]");
  }
  kernels::Conv2dGeometry g;
  g.batch = x.shape()[0];
  g.in_channels = x.shape()[1];
  g.height = x.shape()[2];
  g.width = x.shape()[3];
  g.out_channels = kernel.shape()[0];
  g.kernel_h = kernel.shape()[2];
  g.kernel_w = kernel.shape()[3];
  g.stride_h = opts.stride_h;
  g.stride_w = opts.stride_w;
  g.pad_h = opts.pad_h;
  g.pad_w = opts.pad_w;
  if (kernel.shape()[1] != g.in_channels) {
    throw DimensionError("conv2d: input has " + std::to_string(g.in_channels) +
                         " channels, kernel expects " + std::to_string(kernel.shape()[1]));
  }
  if (g.stride_h < 1 || g.stride_w < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (g.kernel_h > g.height + 2 * g.pad_h || g.kernel_w > g.width + 2 * g.pad_w) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  if (bias && (bias->rank() != 1 || bias->size() != g.out_channels)) {
    throw DimensionError("conv2d: bias must have one entry per output channel");
  }
  const std::size_t oh = g.out_height(), ow = g.out_width();
  std::vector<double> out(g.batch * g.out_channels * oh * ow);
  kernels::par::conv2d_forward(g, x.data(), kernel.data(), out);
  if (bias) {
    const std::size_t plane = oh * ow;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t p = 0; p < plane; ++p)
          out[(n * g.out_channels + o) * plane + p] += (*bias)[o];
  }
  std::vector<Tensor> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return make_result(
      "conv2d", Shape{g.batch, g.out_channels, oh, ow}, std::move(out), inputs,
      [x, kernel, bias, g](TensorImpl& o) {
        if (double* gx = grad_sink(x)) {
          std::vector<double> tmp(x.size());
          kernels::par::conv2d_backward_input(g, o.grad, kernel.data(), tmp);
          for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        }
        if (double* gk = grad_sink(kernel)) {
          std::vector<double> tmp(kernel.size());
          kernels::par::conv2d_backward_kernel(g, o.grad, x.data(), tmp);
          for (std::size_t i = 0; i < tmp.size(); ++i) gk[i] += tmp[i];
        }
        if (bias) {
          if (double* gb = grad_sink(*bias)) {
            const std::size_t plane = g.out_height() * g.out_width();
            for (std::size_t n = 0; n < g.batch; ++n)
              for (std::size_t c = 0; c < g.out_channels; ++c)
                for (std::size_t p = 0; p < plane; ++p)
                  gb[c] += o.grad[(n * g.out_channels + c) * plane + p];
          }
        }
      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "add_bias");
  const auto sp = split_at(x.shape(), ax);
  if (bias.size() != sp.extent) {
    throw DimensionError("add_bias: bias extent " + std::to_string(bias.size()) +
                         " != axis extent " + std::to_string(sp.extent));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.extent; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) out[(o * sp.extent + j) * sp.inner + i] += bias[j];
  return make_result("add_bias", x.shape(), std::move(out), {x, bias},
                     [x, bias, sp](TensorImpl& o) {
                       if (double* gx = grad_sink(x)) {
                         for (std::size_t k = 0; k < o.grad.size(); ++k) gx[k] += o.grad[k];
                       }
                       if (double* gb = grad_sink(bias)) {
                         for (std::size_t a = 0; a < sp.outer; ++a)
                           for (std::size_t j = 0; j < sp.extent; ++j)
                             for (std::size_t i = 0; i < sp.inner; ++i)
                               gb[j] += o.grad[(a * sp.extent + j) * sp.inner + i];
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps,
                  int axis) {
  if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t ax = normalize_axis(axis, x.rank(), "layer_norm");
  const auto sp = split_at(x.shape(), ax);
  if (gain.size() != sp.extent || shift.size() != sp.extent) {
    throw DimensionError("layer_norm: gain/shift extent " + std::to_string(gain.size()) +
                         " != normalized extent " + std::to_string(sp.extent));
  }
  const std::size_t groups = sp.outer * sp.inner;
  std::vector<double> xhat(x.size()), rstd(groups), out(x.size());
  const auto xd = x.data();
  const double n = static_cast<double>(sp.extent);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * sp.extent + j) * sp.inner + i; };
      double mu = 0.0;
      for (std::size_t j = 0; j < sp.extent; ++j) mu += xd[at(j)];
      mu /= n;
      double var = 0.0;
      for (std::size_t j = 0; j < sp.extent; ++j) var += (xd[at(j)] - mu) * (xd[at(j)] - mu);
      var /= n;
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[o * sp.inner + i] = r;
      for (std::size_t j = 0; j < sp.extent; ++j) {
        xhat[at(j)] = (xd[at(j)] - mu) * r;
        out[at(j)] = xhat[at(j)] * gain[j] + shift[j];
      }
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, shift},
      [x, gain, shift, sp, xhat = std::move(xhat), rstd = std::move(rstd)](TensorImpl& o) {
        double* gx = grad_sink(x);
        double* gg = grad_sink(gain);
        double* gs = grad_sink(shift);
        const double n = static_cast<double>(sp.extent);
        for (std::size_t a = 0; a < sp.outer; ++a) {
          for (std::size_t i = 0; i < sp.inner; ++i) {
            auto at = [&](std::size_t j) { return (a * sp.extent + j) * sp.inner + i; };
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < sp.extent; ++j) {
              const double g = o.grad[at(j)];
              if (gg != nullptr) gg[j] += g * xhat[at(j)];
              if (gs != nullptr) gs[j] += g;
              const double gxh = g * gain[j];
              m1 += gxh;
              m2 += gxh * xhat[at(j)];
            }
            if (gx == nullptr) continue;
            m1 /= n;
            m2 /= n;
            const double r = rstd[a * sp.inner + i];
            for (std::size_t j = 0; j < sp.extent; ++j) {
              const double gxh = o.grad[at(j)] * gain[j];
              gx[at(j)] += r * (gxh - m1 - xhat[at(j)] * m2);
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const auto sp = split_at(x.shape(), ax);
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * sp.extent + j) * sp.inner + i; };
      double mx = xd[at(0)];
      for (std::size_t j = 1; j < sp.extent; ++j) mx = std::max(mx, xd[at(j)]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.extent; ++j) {
        out[at(j)] = std::exp(xd[at(j)] - mx);
        z += out[at(j)];
      }
      for (std::size_t j = 0; j < sp.extent; ++j) out[at(j)] /= z;
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [x, sp](TensorImpl& o) {
    double* gx = grad_sink(x);
    if (gx == nullptr) return;
    for (std::size_t a = 0; a < sp.outer; ++a) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t j) { return (a * sp.extent + j) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.extent; ++j) dot += o.grad[at(j)] * o.data[at(j)];
        for (std::size_t j = 0; j < sp.extent; ++j)
          gx[at(j)] += o.data[at(j)] * (o.grad[at(j)] - dot);
      }
    }
  });
}

Tensor box_mean(const Tensor& x, std::size_t window, std::size_t axes) {
  if (axes == 0 || axes > x.rank()) throw DimensionError("box_mean: invalid axis count");
  Tensor out = x;
  for (std::size_t k = 0; k < axes; ++k) out = box_mean_axis(out, window, x.rank() - 1 - k);
  return out;
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: probability must be in [0,1)");
  if (p == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::vector<double> mask(x.size());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) {
    const double r = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = r < p ? 0.0 : keep;
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return make_result("dropout", x.shape(), std::move(out), {x},
                     [x, mask = std::move(mask)](TensorImpl& o) {
                       if (double* gx = grad_sink(x))
                         for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += o.grad[i] * mask[i];
                     });
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log,
                      const Tensor& b, const Tensor& c, const Tensor& d, ScanVariant variant,
                      std::size_t chunk) {
  if (u.rank() != 2 || a_log.rank() != 2 || b.rank() != 2) {
    throw DimensionError("selective_scan: expects u[E,L], a_log[E,S], b[S,L]");
  }
  kernels::ScanDims dims{u.shape()[0], a_log.shape()[1], u.shape()[1]};
  if (delta.shape() != u.shape() || a_log.shape()[0] != dims.channels ||
      b.shape() != Shape{dims.state, dims.length} || c.shape() != b.shape() ||
      d.shape() != Shape{dims.channels}) {
    throw DimensionError("selective_scan: inconsistent operand shapes");
  }
  std::vector<double> a(a_log.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = -std::exp(a_log[i]);
    if (!std::isfinite(a[i]) || a[i] >= 0.0) {
      throw NumericError("selective_scan: state matrix entry " + std::to_string(i) +
                         " is not strictly negative");
    }
  }
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!(delta[i] > 0.0) || !std::isfinite(delta[i])) {
      throw NumericError("selective_scan: step size not positive at step " +
                         std::to_string(i % dims.length) + " (channel " +
                         std::to_string(i / dims.length) + ")");
    }
  }
  kernels::ScanInputs in{u.data(), delta.data(), a, b.data(), c.data(), d.data()};
  std::vector<double> y(dims.channels * dims.length);
  std::vector<double> hidden(dims.channels * dims.length * dims.state);
  if (variant == ScanVariant::kSequential) {
    kernels::par::selective_scan(dims, in, y, hidden);
  } else {
    kernels::par::selective_scan_chunked(dims, in, y, hidden, chunk);
  }
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (!std::isfinite(hidden[i])) {
      throw NumericError("selective_scan: non-finite state at step " +
                         std::to_string((i / dims.state) % dims.length));
    }
  }
  return make_result(
      "selective_scan", u.shape(), std::move(y), {u, delta, a_log, b, c, d},
      [u, delta, a_log, b, c, d, dims, a = std::move(a),
       hidden = std::move(hidden)](TensorImpl& o) {
        std::vector<double> gu(u.size()), gdelta(delta.size()), ga(a.size()), gb(b.size()),
            gc(c.size()), gd(d.size());
        kernels::ScanInputs in{u.data(), delta.data(), a, b.data(), c.data(), d.data()};
        kernels::par::selective_scan_backward(dims, in, hidden, o.grad,
                                              kernels::ScanGrads{gu, gdelta, ga, gb, gc, gd});
        auto add_into = [](const Tensor& t, const std::vector<double>& g) {
          if (double* dst = grad_sink(t))
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        };
        add_into(u, gu);
        add_into(delta, gdelta);
        add_into(b, gb);
        add_into(c, gc);
        add_into(d, gd);
        // dA/d(a_log) = A.
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= a[i];
        add_into(a_log, ga);
      });
}

}  // namespace s2v::ops
