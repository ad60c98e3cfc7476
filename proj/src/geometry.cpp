#include "s2v/geometry.hpp"

#include <cmath>
#include <sstream>

#include "s2v/dsp.hpp"
#include "s2v/errors.hpp"

namespace s2v {

std::string Geometry::str() const {
  std::ostringstream os;
  os << channels << 'x' << time << 'x' << freq << " -> " << depth << 'x' << height << 'x'
     << width;
  return os.str();
}

const DatasetPreset& noddi_preset() {
  static const DatasetPreset p{"noddi", 15, 64, 250.0, 2.16, {30, 64, 64}, {30, 64, 64}, 4110,
                               std::nullopt};
  return p;
}

const DatasetPreset& oddball_preset() {
  static const DatasetPreset p{"oddball", 17, 43, 1000.0, 2.0, {32, 64, 64}, {32, 64, 64}, 17340,
                               1020};
  return p;
}

const DatasetPreset& cnepfl_preset() {
  static const DatasetPreset p{"cnepfl", 20, 64, 5000.0, 1.28, {54, 108, 108}, {30, 64, 64}, 6880,
                               std::nullopt};
  return p;
}

const DatasetPreset& preset_by_name(const std::string& name) {
  if (name == "noddi") return noddi_preset();
  if (name == "oddball") return oddball_preset();
  if (name == "cnepfl") return cnepfl_preset();
  throw ConfigError("unknown dataset preset '" + name + "' (valid: noddi, oddball, cnepfl)");
}

std::size_t default_frame_length(double fs_hz) {
  const auto frame = static_cast<std::size_t>(2.0 * std::round(fs_hz / 10.0));
  return frame < 2 ? 2 : frame;
}

std::size_t default_hop(std::size_t frame_len) { return frame_len / 2 == 0 ? 1 : frame_len / 2; }

Geometry preset_geometry(const DatasetPreset& preset, std::size_t frame_len, std::size_t hop,
                         double cutoff_hz) {
  if (frame_len == 0) frame_len = default_frame_length(preset.fs_hz);
  if (hop == 0) hop = default_hop(frame_len);
  const std::size_t window = dsp::window_length(preset.fs_hz, preset.tr_s);
  if (frame_len > window) throw ConfigError("STFT frame longer than the fs x TR window");
  Geometry g;
  g.channels = preset.eeg_channels;
  g.time = (window - frame_len) / hop + 1;
  g.freq = dsp::retained_bins(preset.fs_hz, frame_len, cutoff_hz);
  g.depth = preset.target_volume[0];
  g.height = preset.target_volume[1];
  g.width = preset.target_volume[2];
  return g;
}

}  // namespace s2v
