#pragma once

// Raw numeric kernels behind the differentiable ops. Every kernel exists in a
// plain serial form (`ref`) and an OpenMP form (`par`). The parallel forms
// assign each output element to exactly one thread and keep the serial
// accumulation order, so their results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace s2v::kernels {

struct Conv2dGeometry {
  std::size_t batch = 1, in_channels = 1, height = 1, width = 1;
  std::size_t out_channels = 1, kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1, pad_h = 0, pad_w = 0;

  std::size_t out_height() const { return (height + 2 * pad_h - kernel_h) / stride_h + 1; }
  std::size_t out_width() const { return (width + 2 * pad_w - kernel_w) / stride_w + 1; }
};

// Dimensions of one selective scan: `channels` independent recurrences, each
// with a `state` dimensional hidden vector, run over `length` steps.
struct ScanDims {
  std::size_t channels = 1, state = 1, length = 1;
};

// Inputs of the discretized selective scan, all row-major:
//   u, delta : [channels, length]      (delta > 0)
//   a        : [channels, state]       continuous-time diagonal, a < 0
//   b, c     : [state, length]         input-dependent projections
//   d        : [channels]              skip coefficient
struct ScanInputs {
  std::span<const double> u, delta, a, b, c, d;
};

struct ScanGrads {
  std::span<double> u, delta, a, b, c, d;  // same layouts as ScanInputs
};

namespace ref {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<double> output);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out,
                           std::span<const double> kernel, std::span<double> grad_in);
void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out,
                            std::span<const double> input, std::span<double> grad_kernel);

// c[m,n] (+)= sum_k op(a)[m,k] * op(b)[k,n]; op transposes when requested.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);

// Step-by-step recurrence. `hidden`, when non-empty, receives h_t laid out
// as [channels, length, state].
void selective_scan(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                    std::span<double> hidden);

}  // namespace ref

namespace par {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<double> output);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out,
                           std::span<const double> kernel, std::span<double> grad_in);
void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out,
                            std::span<const double> input, std::span<double> grad_kernel);

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);

// Sequential in time, parallel over channels.
void selective_scan(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                    std::span<double> hidden);

// Blocked scan: every (channel, chunk) pair is scanned from a zero state in
// parallel, chunk carries are chained per channel, then each chunk's outputs
// are corrected with the decayed incoming carry.
void selective_scan_chunked(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                            std::span<double> hidden, std::size_t chunk);

// Reverse-time adjoint of the recurrence. `hidden` must hold the forward
// states. All gradient buffers are overwritten.
void selective_scan_backward(const ScanDims& dims, const ScanInputs& in,
                             std::span<const double> hidden, std::span<const double> grad_y,
                             const ScanGrads& grads);

}  // namespace par

}  // namespace s2v::kernels
