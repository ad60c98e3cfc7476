#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>

namespace s2v {

// Input spectrogram (C,T,F) and output volume (D,H,W) extents of one dataset.
struct Geometry {
  std::size_t channels = 0, time = 0, freq = 0;
  std::size_t depth = 0, height = 0, width = 0;

  bool operator==(const Geometry&) const = default;
  std::string str() const;
};

// Acquisition parameters of the public EEG-fMRI benchmarks.
struct DatasetPreset {
  std::string name;
  std::size_t subjects = 0;
  std::size_t eeg_channels = 0;
  double fs_hz = 0;
  double tr_s = 0;
  std::array<std::size_t, 3> raw_volume{};     // as acquired
  std::array<std::size_t, 3> target_volume{};  // after optional DCT down-sampling
  std::size_t declared_pairs = 0;
  std::optional<std::size_t> volumes_per_subject;
};

const DatasetPreset& noddi_preset();
const DatasetPreset& oddball_preset();
const DatasetPreset& cnepfl_preset();
// Looks up "noddi", "oddball" or "cnepfl"; throws ConfigError otherwise.
const DatasetPreset& preset_by_name(const std::string& name);

// Default STFT framing: frame = fs/5 samples rounded to even, hop = frame/2.
std::size_t default_frame_length(double fs_hz);
std::size_t default_hop(std::size_t frame_len);

// Spectrogram extents produced by fs x TR windowing of a preset with the
// given framing, and the full (C,T,F,D,H,W) geometry.
Geometry preset_geometry(const DatasetPreset& preset, std::size_t frame_len = 0,
                         std::size_t hop = 0, double cutoff_hz = 250.0);

}  // namespace s2v
