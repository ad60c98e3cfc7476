#include "s2v/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "s2v/errors.hpp"
#include "s2v/geometry.hpp"

namespace s2v::dsp {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void magnitudes(double* dst) {
    fftw_execute(plan_);
    for (std::size_t k = 0; k <= n_ / 2; ++k) dst[k] = std::hypot(out_[k][0], out_[k][1]);
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Rows k < m of the orthonormal DCT-II matrix of size n, rescaled by
// sqrt(m/n), then mapped back through the orthonormal inverse of size m.
std::vector<double> resample_operator(std::size_t n, std::size_t m) {
  auto dct = [](std::size_t size, std::size_t k, std::size_t i) {
    const double alpha = k == 0 ? std::sqrt(1.0 / size) : std::sqrt(2.0 / size);
    return alpha * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * size));
  };
  const double rescale = std::sqrt(static_cast<double>(m) / static_cast<double>(n));
  std::vector<double> op(m * n, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k) acc += dct(m, k, j) * dct(n, k, i);
      op[j * n + i] = rescale * acc;
    }
  }
  return op;
}

// Applies op [m, n] along `axis` of a row-major 3-D array.
std::vector<double> apply_along(const std::vector<double>& x, std::array<std::size_t, 3>& shape,
                                std::size_t axis, const std::vector<double>& op, std::size_t m) {
  const std::size_t n = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < 3; ++i) inner *= shape[i];
  std::vector<double> out(outer * m * inner, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t oi = 0; oi < static_cast<std::ptrdiff_t>(outer); ++oi) {
    const std::size_t o = static_cast<std::size_t>(oi);
    for (std::size_t j = 0; j < m; ++j) {
      double* dst = out.data() + (o * m + j) * inner;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = op[j * n + i];
        const double* src = x.data() + (o * n + i) * inner;
        for (std::size_t q = 0; q < inner; ++q) dst[q] += w * src[q];
      }
    }
  }
  shape[axis] = m;
  return out;
}

std::vector<double> channel_row(const Tensor& samples, std::size_t c, std::size_t begin,
                                std::size_t end) {
  const std::size_t n = samples.shape()[1];
  const auto d = samples.data();
  return std::vector<double>(d.begin() + c * n + begin, d.begin() + c * n + end);
}

}  // namespace

std::size_t window_length(double fs_hz, double tr_s) {
  if (!(fs_hz > 0) || !(tr_s > 0)) throw ConfigError("fs and TR must be positive");
  return static_cast<std::size_t>(std::llround(fs_hz * tr_s));
}

std::vector<Tensor> segment_windows(const EegRecording& rec, double tr_s) {
  if (rec.samples.rank() != 2) throw DimensionError("EEG recording must be [channels, samples]");
  const std::size_t w = window_length(rec.fs_hz, tr_s);
  const std::size_t count = w == 0 ? 0 : rec.length() / w;
  if (count == 0) {
    throw DataError("recording of " + std::to_string(rec.length()) +
                    " samples is shorter than one window of " + std::to_string(w));
  }
  std::vector<Tensor> windows;
  windows.reserve(count);
  const std::size_t C = rec.channels();
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> v;
    v.reserve(C * w);
    for (std::size_t c = 0; c < C; ++c) {
      auto row = channel_row(rec.samples, c, k * w, (k + 1) * w);
      v.insert(v.end(), row.begin(), row.end());
    }
    windows.emplace_back(Shape{C, w}, std::move(v));
  }
  return windows;
}

Tensor lag_aligned_window(const EegRecording& rec, double bold_time_s, double span_s, double lag_s,
                          std::size_t bold_index) {
  const double start_s = bold_time_s - lag_s - span_s;
  if (start_s < -1e-9) {
    throw DataError("BOLD volume " + std::to_string(bold_index) + " at " +
                    std::to_string(bold_time_s) + " s: lag-aligned window starts " +
                    std::to_string(-start_s) + " s before the recording");
  }
  const auto begin = static_cast<std::size_t>(std::llround(std::max(0.0, start_s) * rec.fs_hz));
  const auto end = static_cast<std::size_t>(std::llround((bold_time_s - lag_s) * rec.fs_hz));
  if (end > rec.length() || end <= begin) {
    throw DataError("BOLD volume " + std::to_string(bold_index) +
                    ": lag-aligned window extends past the end of the recording");
  }
  const std::size_t C = rec.channels();
  std::vector<double> v;
  v.reserve(C * (end - begin));
  for (std::size_t c = 0; c < C; ++c) {
    auto row = channel_row(rec.samples, c, begin, end);
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{C, end - begin}, std::move(v));
}

Tensor stft(std::span<const double> signal, double fs_hz, std::size_t frame_len,
            std::size_t hop) {
  if (!(fs_hz > 0)) throw ConfigError("stft: fs must be positive");
  if (hop < 1) throw DimensionError("stft: hop must be >= 1");
  if (frame_len < 2 || frame_len > signal.size()) {
    throw DimensionError("stft: frame of " + std::to_string(frame_len) +
                         " samples does not fit a segment of " + std::to_string(signal.size()));
  }
  const std::size_t frames = (signal.size() - frame_len) / hop + 1;
  const std::size_t bins = frame_len / 2 + 1;
  std::vector<double> window(frame_len);
  for (std::size_t i = 0; i < frame_len; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / frame_len);
  std::vector<double> out(frames * bins);
  RealFft fft(frame_len);
  for (std::size_t t = 0; t < frames; ++t) {
    double* in = fft.input();
    for (std::size_t i = 0; i < frame_len; ++i) in[i] = signal[t * hop + i] * window[i];
    fft.magnitudes(out.data() + t * bins);
  }
  return Tensor(Shape{frames, bins}, std::move(out));
}

std::size_t retained_bins(double fs_hz, std::size_t frame_len, double cutoff_hz) {
  if (!(fs_hz > 0) || frame_len < 2) throw ConfigError("retained_bins: invalid fs or frame");
  const std::size_t nyquist_bin = frame_len / 2;
  const double width = fs_hz / static_cast<double>(frame_len);
  // Small tolerance so a bin centred exactly on the cutoff survives.
  const auto k = static_cast<std::size_t>(std::floor(cutoff_hz / width + 1e-9));
  return std::min(k, nyquist_bin);
}

Tensor band_limit(const Tensor& spec, double fs_hz, std::size_t frame_len, double cutoff_hz) {
  if (spec.rank() != 2 || spec.shape()[1] != frame_len / 2 + 1) {
    throw DimensionError("band_limit: spectrogram " + shape_str(spec.shape()) +
                         " does not match frame length " + std::to_string(frame_len));
  }
  const std::size_t keep = retained_bins(fs_hz, frame_len, cutoff_hz);
  if (keep == 0) throw ConfigError("band_limit: cutoff removes every non-DC bin");
  const std::size_t T = spec.shape()[0], full = spec.shape()[1];
  std::vector<double> out(T * keep);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < keep; ++f) out[t * keep + f] = spec[t * full + 1 + f];
  return Tensor(Shape{T, keep}, std::move(out));
}

Tensor minmax_normalize(const Tensor& t) {
  const auto d = t.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const double span = *hi - *lo;
  std::vector<double> out(d.size(), 0.0);
  if (span > 0) {
    const double mn = *lo;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (d[i] - mn) / span;
  }
  return Tensor(t.shape(), std::move(out));
}

Tensor dct_downsample(const Tensor& volume, const std::array<std::size_t, 3>& target) {
  if (volume.rank() != 3) throw DimensionError("dct_downsample: volume must be [D,H,W]");
  std::array<std::size_t, 3> shape{volume.shape()[0], volume.shape()[1], volume.shape()[2]};
  for (std::size_t a = 0; a < 3; ++a) {
    if (target[a] == 0 || target[a] > shape[a]) {
      throw DimensionError("dct_downsample: target " + std::to_string(target[a]) +
                           " exceeds source extent " + std::to_string(shape[a]) + " on axis " +
                           std::to_string(a));
    }
  }
  // The resampler maps constants to themselves, so it runs on the residual
  // around the midrange; a constant volume then comes back bit for bit.
  const auto [lo, hi] = std::minmax_element(volume.data().begin(), volume.data().end());
  const double offset = volume.size() == 0 ? 0.0 : 0.5 * (*lo + *hi);
  std::vector<double> x(volume.data().begin(), volume.data().end());
  for (auto& v : x) v -= offset;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto op = resample_operator(shape[a], target[a]);
    x = apply_along(x, shape, a, op, target[a]);
  }
  for (auto& v : x) v += offset;
  return Tensor(Shape{target[0], target[1], target[2]}, std::move(x));
}

Tensor spectrogram(const Tensor& window, double fs_hz, const StftConfig& cfg) {
  if (window.rank() != 2) throw DimensionError("spectrogram: window must be [channels, samples]");
  const std::size_t frame = cfg.frame_len == 0 ? default_frame_length(fs_hz) : cfg.frame_len;
  const std::size_t hop = cfg.hop == 0 ? default_hop(frame) : cfg.hop;
  const std::size_t C = window.shape()[0], n = window.shape()[1];
  std::vector<double> values;
  std::size_t T = 0, F = 0;
  for (std::size_t c = 0; c < C; ++c) {
    auto spec = band_limit(stft(window.data().subspan(c * n, n), fs_hz, frame, hop), fs_hz, frame,
                           cfg.cutoff_hz);
    T = spec.shape()[0];
    F = spec.shape()[1];
    values.insert(values.end(), spec.data().begin(), spec.data().end());
  }
  return minmax_normalize(Tensor(Shape{C, T, F}, std::move(values)));
}

std::vector<SamplePair> build_pairs(const EegRecording& rec, const Tensor& bold, double tr_s,
                                    const PairingConfig& cfg, PairingReport* report) {
  if (bold.rank() != 4) throw DimensionError("build_pairs: BOLD series must be [V,D,H,W]");
  PairingReport rep;
  rep.volumes = bold.shape()[0];
  const std::size_t w = window_length(rec.fs_hz, tr_s);
  rep.windows = w == 0 ? 0 : rec.length() / w;
  const std::size_t vol_size = bold.size() / rep.volumes;
  const Shape vol_shape{bold.shape()[1], bold.shape()[2], bold.shape()[3]};

  auto make_volume = [&](std::size_t v) {
    const auto d = bold.data().subspan(v * vol_size, vol_size);
    Tensor vol(vol_shape, std::vector<double>(d.begin(), d.end()));
    if (cfg.volume_target) vol = dct_downsample(vol, *cfg.volume_target);
    return VolumeSample{minmax_normalize(vol), tr_s};
  };

  std::vector<SamplePair> pairs;
  if (cfg.mode == PairingMode::kTrWindows) {
    const auto windows = rep.windows > 0 ? segment_windows(rec, tr_s) : std::vector<Tensor>{};
    for (std::size_t k = 0; k < windows.size(); ++k) {
      const std::size_t v = k;
      if (v >= rep.volumes) {
        ++rep.skipped_late;
        continue;
      }
      pairs.push_back({{spectrogram(windows[k], rec.fs_hz, cfg.stft), 0.0}, make_volume(v), v});
    }
  } else {
    for (std::size_t v = 0; v < rep.volumes; ++v) {
      const double bold_time = static_cast<double>(v + 1) * tr_s;
      if (bold_time - cfg.lag_s - cfg.span_s < -1e-9) {
        ++rep.skipped_early;
        continue;
      }
      if (std::llround((bold_time - cfg.lag_s) * rec.fs_hz) >
          static_cast<long long>(rec.length())) {
        ++rep.skipped_late;
        continue;
      }
      auto window = lag_aligned_window(rec, bold_time, cfg.span_s, cfg.lag_s, v);
      pairs.push_back({{spectrogram(window, rec.fs_hz, cfg.stft), cfg.lag_s}, make_volume(v), v});
    }
  }
  rep.pairs = pairs.size();
  if (report != nullptr) *report = rep;
  if (pairs.empty()) {
    throw DataError("subject '" + rec.subject_id + "': no viable EEG/BOLD pairs (" +
                    std::to_string(rep.volumes) + " volumes, " + std::to_string(rep.windows) +
                    " windows)");
  }
  return pairs;
}

}  // namespace s2v::dsp
