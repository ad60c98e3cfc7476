#pragma once

// Differentiable tensor operations. Each op computes its forward value
// eagerly and, when a tape is active and an input requires a gradient,
// records the matching backward rule.

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "s2v/tensor.hpp"

namespace s2v::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor exp(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

// Full reductions to a one-element tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Constant zero padding; `widths[i]` = (before, after) for axis i.
Tensor pad(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& widths);
// out[..., i] = x[..., index[i]] along the last axis. Indices may repeat.
Tensor take_last(const Tensor& x, const std::vector<std::size_t>& index);

// Batched matrix product over the two trailing axes; leading axes must match.
Tensor matmul(const Tensor& a, const Tensor& b);

// Affine map over the trailing axis: y = x W^T + bias.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x + bias broadcast along `axis`; bias has extent shape[axis].
Tensor add_bias(const Tensor& x, const Tensor& bias, int axis);

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

// Cross-correlation of x[N,C,H,W] with kernel[O,C,kh,kw]; bias[O] optional.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              const Conv2dOptions& opts = {});

// Normalizes along `axis` (default: trailing) to zero mean, unit variance,
// then applies gain/shift of extent shape[axis].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps,
                  int axis = -1);

Tensor softmax(const Tensor& x, int axis = -1);

// Mean over every `window`-wide box of the trailing `axes` axes (valid
// positions only, stride 1).
Tensor box_mean(const Tensor& x, std::size_t window, std::size_t axes);

// Inverted dropout driven by a caller-owned seed; p == 0 is the identity.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed);

enum class ScanVariant { kSequential, kChunked };

// Discretized selective state-space scan (see kernels::ScanInputs for layouts):
//   u, delta [E,L]; a_log [E,S] with A = -exp(a_log); b, c [S,L]; d [E].
// Throws NumericError if a state becomes non-finite or a decay factor leaves
// [0,1].
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log,
                      const Tensor& b, const Tensor& c, const Tensor& d,
                      ScanVariant variant = ScanVariant::kChunked, std::size_t chunk = 64);

}  // namespace s2v::ops
