#include "s2v/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace s2v::kernels {

namespace {

// Row-major index helpers.
inline std::size_t idx4(std::size_t a, std::size_t b, std::size_t c, std::size_t d,
                        std::size_t nb, std::size_t nc, std::size_t nd) {
  return ((a * nb + b) * nc + c) * nd + d;
}

inline double conv_output_at(const Conv2dGeometry& g, std::span<const double> input,
                             std::span<const double> kernel, std::size_t n, std::size_t o,
                             std::size_t oy, std::size_t ox) {
  double acc = 0.0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride_h + i) -
                               static_cast<std::ptrdiff_t>(g.pad_h);
      if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride_w + j) -
                                 static_cast<std::ptrdiff_t>(g.pad_w);
        if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
        acc += input[idx4(n, c, y, x, g.in_channels, g.height, g.width)] *
               kernel[idx4(o, c, i, j, g.in_channels, g.kernel_h, g.kernel_w)];
      }
    }
  }
  return acc;
}

inline void conv_grad_input_plane(const Conv2dGeometry& g, std::span<const double> grad_out,
                                  std::span<const double> kernel, std::span<double> grad_in,
                                  std::size_t n, std::size_t c) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  double* plane = grad_in.data() + (n * g.in_channels + c) * g.height * g.width;
  std::fill(plane, plane + g.height * g.width, 0.0);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double go = grad_out[idx4(n, o, oy, ox, g.out_channels, oh, ow)];
        if (go == 0.0) continue;
        for (std::size_t i = 0; i < g.kernel_h; ++i) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride_h + i) -
                                   static_cast<std::ptrdiff_t>(g.pad_h);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t j = 0; j < g.kernel_w; ++j) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride_w + j) -
                                     static_cast<std::ptrdiff_t>(g.pad_w);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[y * g.width + x] +=
                go * kernel[idx4(o, c, i, j, g.in_channels, g.kernel_h, g.kernel_w)];
          }
        }
      }
    }
  }
}

inline void conv_grad_kernel_block(const Conv2dGeometry& g, std::span<const double> grad_out,
                                   std::span<const double> input, std::span<double> grad_kernel,
                                   std::size_t o, std::size_t c) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t i = 0; i < g.kernel_h; ++i) {
    for (std::size_t j = 0; j < g.kernel_w; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride_h + i) -
                                   static_cast<std::ptrdiff_t>(g.pad_h);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride_w + j) -
                                     static_cast<std::ptrdiff_t>(g.pad_w);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            acc += grad_out[idx4(n, o, oy, ox, g.out_channels, oh, ow)] *
                   input[idx4(n, c, y, x, g.in_channels, g.height, g.width)];
          }
        }
      }
      grad_kernel[idx4(o, c, i, j, g.in_channels, g.kernel_h, g.kernel_w)] = acc;
    }
  }
}

inline void gemm_row(bool trans_a, bool trans_b, std::size_t row, std::size_t m,
                     std::size_t n, std::size_t k, std::span<const double> a,
                     std::span<const double> b, std::span<double> c, bool accumulate) {
  double* out = c.data() + row * n;
  if (!accumulate) std::fill(out, out + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = trans_a ? a[p * m + row] : a[row * k + p];
    if (av == 0.0) continue;
    if (!trans_b) {
      const double* brow = b.data() + p * n;
      for (std::size_t q = 0; q < n; ++q) out[q] += av * brow[q];
    } else {
      for (std::size_t q = 0; q < n; ++q) out[q] += av * b[q * k + p];
    }
  }
}

// Transposes [state, length] projections to [length, state] so the inner
// state loop is contiguous.
std::vector<double> to_time_major(std::span<const double> x, std::size_t state,
                                  std::size_t length) {
  std::vector<double> out(state * length);
  for (std::size_t s = 0; s < state; ++s) {
    for (std::size_t t = 0; t < length; ++t) out[t * state + s] = x[s * length + t];
  }
  return out;
}

// Scans steps [begin, end) of channel e starting from state `h`. Writes y
// (without correction) and, if requested, hidden states.
inline void scan_span(const ScanDims& dims, const ScanInputs& in, const double* bt,
                      const double* ct, std::size_t e, std::size_t begin, std::size_t end,
                      double* h, double* y, double* hidden, double* decay) {
  const std::size_t S = dims.state, L = dims.length;
  const double* a = in.a.data() + e * S;
  const double dskip = in.d[e];
  if (decay != nullptr) std::fill(decay, decay + S, 1.0);
  for (std::size_t t = begin; t < end; ++t) {
    const double dt = in.delta[e * L + t];
    const double ut = in.u[e * L + t];
    const double* b = bt + t * S;
    const double* c = ct + t * S;
    double acc = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      const double abar = std::exp(dt * a[s]);
      h[s] = abar * h[s] + dt * b[s] * ut;
      acc += c[s] * h[s];
      if (decay != nullptr) decay[s] *= abar;
    }
    y[e * L + t] = acc + dskip * ut;
    if (hidden != nullptr) std::copy(h, h + S, hidden + (e * L + t) * S);
  }
}

}  // namespace

namespace ref {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<double> output) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          output[idx4(n, o, oy, ox, g.out_channels, oh, ow)] =
              conv_output_at(g, input, kernel, n, o, oy, ox);
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out,
                           std::span<const double> kernel, std::span<double> grad_in) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      conv_grad_input_plane(g, grad_out, kernel, grad_in, n, c);
}

void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out,
                            std::span<const double> input, std::span<double> grad_kernel) {
  for (std::size_t o = 0; o < g.out_channels; ++o)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      conv_grad_kernel_block(g, grad_out, input, grad_kernel, o, c);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  for (std::size_t row = 0; row < m; ++row)
    gemm_row(trans_a, trans_b, row, m, n, k, a, b, c, accumulate);
}

void selective_scan(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                    std::span<double> hidden) {
  const auto bt = to_time_major(in.b, dims.state, dims.length);
  const auto ct = to_time_major(in.c, dims.state, dims.length);
  std::vector<double> h(dims.state);
  for (std::size_t e = 0; e < dims.channels; ++e) {
    std::fill(h.begin(), h.end(), 0.0);
    scan_span(dims, in, bt.data(), ct.data(), e, 0, dims.length, h.data(), y.data(),
              hidden.empty() ? nullptr : hidden.data(), nullptr);
  }
}

}  // namespace ref

namespace par {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<double> output) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / g.out_channels;
    const std::size_t o = static_cast<std::size_t>(p) % g.out_channels;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        output[idx4(n, o, oy, ox, g.out_channels, oh, ow)] =
            conv_output_at(g, input, kernel, n, o, oy, ox);
  }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out,
                           std::span<const double> kernel, std::span<double> grad_in) {
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    conv_grad_input_plane(g, grad_out, kernel, grad_in, static_cast<std::size_t>(p) / g.in_channels,
                          static_cast<std::size_t>(p) % g.in_channels);
  }
}

void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out,
                            std::span<const double> input, std::span<double> grad_kernel) {
  const std::ptrdiff_t blocks = static_cast<std::ptrdiff_t>(g.out_channels * g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < blocks; ++p) {
    conv_grad_kernel_block(g, grad_out, input, grad_kernel,
                           static_cast<std::size_t>(p) / g.in_channels,
                           static_cast<std::size_t>(p) % g.in_channels);
  }
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k > 4096)
  for (std::ptrdiff_t row = 0; row < static_cast<std::ptrdiff_t>(m); ++row)
    gemm_row(trans_a, trans_b, static_cast<std::size_t>(row), m, n, k, a, b, c, accumulate);
}

void selective_scan(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                    std::span<double> hidden) {
  const auto bt = to_time_major(in.b, dims.state, dims.length);
  const auto ct = to_time_major(in.c, dims.state, dims.length);
#pragma omp parallel
  {
    std::vector<double> h(dims.state);
#pragma omp for schedule(static)
    for (std::ptrdiff_t e = 0; e < static_cast<std::ptrdiff_t>(dims.channels); ++e) {
      std::fill(h.begin(), h.end(), 0.0);
      scan_span(dims, in, bt.data(), ct.data(), static_cast<std::size_t>(e), 0, dims.length,
                h.data(), y.data(), hidden.empty() ? nullptr : hidden.data(), nullptr);
    }
  }
}

void selective_scan_chunked(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                            std::span<double> hidden, std::size_t chunk) {
  const std::size_t E = dims.channels, S = dims.state, L = dims.length;
  chunk = std::max<std::size_t>(1, std::min(chunk, L));
  const std::size_t chunks = (L + chunk - 1) / chunk;
  const auto bt = to_time_major(in.b, S, L);
  const auto ct = to_time_major(in.c, S, L);

  // Per (channel, chunk): end state from a zero start and the product of the
  // chunk's decay factors.
  std::vector<double> local_end(E * chunks * S), local_decay(E * chunks * S);
  const std::ptrdiff_t jobs = static_cast<std::ptrdiff_t>(E * chunks);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t e = static_cast<std::size_t>(job) / chunks;
    const std::size_t k = static_cast<std::size_t>(job) % chunks;
    double* h = local_end.data() + (e * chunks + k) * S;
    std::fill(h, h + S, 0.0);
    scan_span(dims, in, bt.data(), ct.data(), e, k * chunk, std::min(L, (k + 1) * chunk), h,
              y.data(), hidden.empty() ? nullptr : hidden.data(),
              local_decay.data() + (e * chunks + k) * S);
  }

  // Carry into chunk k: carry[k] = local_end[k-1] + local_decay[k-1] * carry[k-1].
  std::vector<double> carry(E * chunks * S, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ei = 0; ei < static_cast<std::ptrdiff_t>(E); ++ei) {
    const std::size_t e = static_cast<std::size_t>(ei);
    for (std::size_t k = 1; k < chunks; ++k) {
      const double* prev = carry.data() + (e * chunks + k - 1) * S;
      const double* end = local_end.data() + (e * chunks + k - 1) * S;
      const double* dec = local_decay.data() + (e * chunks + k - 1) * S;
      double* cur = carry.data() + (e * chunks + k) * S;
      for (std::size_t s = 0; s < S; ++s) cur[s] = end[s] + dec[s] * prev[s];
    }
  }

  // Correct outputs of chunks k >= 1 with the decayed carry.
#pragma omp parallel
  {
    std::vector<double> decay(S);
#pragma omp for schedule(static)
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
      const std::size_t e = static_cast<std::size_t>(job) / chunks;
      const std::size_t k = static_cast<std::size_t>(job) % chunks;
      if (k == 0) continue;
      const double* cin = carry.data() + (e * chunks + k) * S;
      const double* a = in.a.data() + e * S;
      std::fill(decay.begin(), decay.end(), 1.0);
      for (std::size_t t = k * chunk; t < std::min(L, (k + 1) * chunk); ++t) {
        const double dt = in.delta[e * L + t];
        const double* c = ct.data() + t * S;
        double acc = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          decay[s] *= std::exp(dt * a[s]);
          const double corr = decay[s] * cin[s];
          acc += c[s] * corr;
          if (!hidden.empty()) hidden[(e * L + t) * S + s] += corr;
        }
        y[e * L + t] += acc;
      }
    }
  }
}

void selective_scan_backward(const ScanDims& dims, const ScanInputs& in,
                             std::span<const double> hidden, std::span<const double> grad_y,
                             const ScanGrads& grads) {
  const std::size_t E = dims.channels, S = dims.state, L = dims.length;
  const auto bt = to_time_major(in.b, S, L);
  const auto ct = to_time_major(in.c, S, L);
  // Adjoint of h_t for every (channel, step), kept for the cross-channel sums.
  std::vector<double> grad_h(E * L * S);

#pragma omp parallel
  {
    std::vector<double> gh(S), abar(S);
#pragma omp for schedule(static)
    for (std::ptrdiff_t ei = 0; ei < static_cast<std::ptrdiff_t>(E); ++ei) {
      const std::size_t e = static_cast<std::size_t>(ei);
      const double* a = in.a.data() + e * S;
      double* ga = grads.a.data() + e * S;
      std::fill(ga, ga + S, 0.0);
      std::fill(gh.begin(), gh.end(), 0.0);
      double gd = 0.0;
      for (std::size_t ti = L; ti-- > 0;) {
        const double dt = in.delta[e * L + ti];
        const double ut = in.u[e * L + ti];
        const double gy = grad_y[e * L + ti];
        const double* b = bt.data() + ti * S;
        const double* c = ct.data() + ti * S;
        const double* hprev = ti > 0 ? hidden.data() + (e * L + ti - 1) * S : nullptr;
        double gu = gy * in.d[e];
        double gdelta = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          gh[s] += gy * c[s];
          abar[s] = std::exp(dt * a[s]);
          gu += gh[s] * dt * b[s];
          gdelta += gh[s] * b[s] * ut;
          if (hprev != nullptr) {
            const double gabar = gh[s] * hprev[s] * abar[s];
            gdelta += gabar * a[s];
            ga[s] += gabar * dt;
          }
        }
        std::copy(gh.begin(), gh.end(), grad_h.data() + (e * L + ti) * S);
        gd += gy * ut;
        grads.u[e * L + ti] = gu;
        grads.delta[e * L + ti] = gdelta;
        for (std::size_t s = 0; s < S; ++s) gh[s] *= abar[s];
      }
      grads.d[e] = gd;
    }
  }

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(L); ++ti) {
    const std::size_t t = static_cast<std::size_t>(ti);
    for (std::size_t s = 0; s < S; ++s) {
      double gb = 0.0, gc = 0.0;
      for (std::size_t e = 0; e < E; ++e) {
        gb += grad_h[(e * L + t) * S + s] * in.delta[e * L + t] * in.u[e * L + t];
        gc += grad_y[e * L + t] * hidden[(e * L + t) * S + s];
      }
      grads.b[s * L + t] = gb;
      grads.c[s * L + t] = gc;
    }
  }
}

}  // namespace par

}  // namespace s2v::kernels
