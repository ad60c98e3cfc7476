#pragma once

// EEG/fMRI preprocessing: fs x TR windowing or lag-aligned windows, STFT
// magnitude spectrograms, DC and high-frequency bin removal, min-max
// normalization, and DCT volume down-sampling.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2v/tensor.hpp"

namespace s2v::dsp {

struct EegRecording {
  Tensor samples;  // [C, n] microvolts
  double fs_hz = 0;
  std::string subject_id;

  std::size_t channels() const { return samples.shape()[0]; }
  std::size_t length() const { return samples.shape()[1]; }
};

struct SpectrogramSample {
  Tensor data;  // [C,T,F] in [0,1]
  double window_end_offset_s = 0;
};

struct VolumeSample {
  Tensor data;  // [D,H,W] in [0,1]
  double tr_s = 0;
};

struct SamplePair {
  SpectrogramSample input;
  VolumeSample target;
  std::size_t volume_index = 0;
};

// Samples per fs x TR window: round(fs * tr).
std::size_t window_length(double fs_hz, double tr_s);

// Consecutive non-overlapping windows, each [C, round(fs*tr)]; the trailing
// remainder is dropped. Throws DataError when not even one window fits.
std::vector<Tensor> segment_windows(const EegRecording& rec, double tr_s);

// The [bold - lag - span, bold - lag) segment of every channel, [C, n].
// Throws DataError naming `bold_index` when the window leaves the recording.
Tensor lag_aligned_window(const EegRecording& rec, double bold_time_s, double span_s = 20.0,
                          double lag_s = 6.0, std::size_t bold_index = 0);

// One-sided magnitude STFT with a periodic Hann window: [T, frame/2+1].
Tensor stft(std::span<const double> signal, double fs_hz, std::size_t frame_len,
            std::size_t hop);

// Number of bins kept by band_limit: 1..K with K*fs/frame <= cutoff, capped
// at the Nyquist bin.
std::size_t retained_bins(double fs_hz, std::size_t frame_len, double cutoff_hz = 250.0);

// Drops the DC bin and every bin above the cutoff: [T, F_full] -> [T, F].
Tensor band_limit(const Tensor& spec, double fs_hz, std::size_t frame_len,
                  double cutoff_hz = 250.0);

// (t - min) / (max - min); constant input maps to zeros.
Tensor minmax_normalize(const Tensor& t);

// Orthonormal 3-D DCT-II, keep the lowest target coefficients, rescale and
// inverse at the target size. Constants are preserved.
Tensor dct_downsample(const Tensor& volume, const std::array<std::size_t, 3>& target);

struct StftConfig {
  std::size_t frame_len = 0;  // 0 = default for fs
  std::size_t hop = 0;        // 0 = frame/2
  double cutoff_hz = 250.0;
};

// [C, n] window -> normalized [C, T, F] spectrogram.
Tensor spectrogram(const Tensor& window, double fs_hz, const StftConfig& cfg);

enum class PairingMode { kTrWindows, kLagAligned };

struct PairingConfig {
  PairingMode mode = PairingMode::kTrWindows;
  StftConfig stft;
  double span_s = 20.0;
  double lag_s = 6.0;
  std::optional<std::array<std::size_t, 3>> volume_target;  // DCT down-sampling
};

struct PairingReport {
  std::size_t volumes = 0;
  std::size_t windows = 0;       // fs x TR windows available
  std::size_t pairs = 0;
  std::size_t skipped_early = 0; // lag mode: window starts before the recording
  std::size_t skipped_late = 0;  // window or volume past the end of the data
};

// Pairs EEG with BOLD volumes [V, D, H, W]. Volume v is time-stamped at the
// end of its acquisition, (v+1) * TR, so fs x TR window k = [k TR, (k+1) TR)
// pairs with volume k, the volume that follows it. Lag mode pairs volume v
// with the lag-aligned window ending lag_s before its time stamp. Throws
// DataError when no pair survives.
std::vector<SamplePair> build_pairs(const EegRecording& rec, const Tensor& bold, double tr_s,
                                    const PairingConfig& cfg, PairingReport* report = nullptr);

}  // namespace s2v::dsp
