#pragma once

// Dataset manifests: UTF-8 text, a `key = value` header followed by one
// `subject <id>: <path> <path>` line per pair (paired manifests) or per
// recording session (raw manifests). Relative paths resolve against the
// manifest's directory.
//
//   name = noddi-synth
//   kind = paired
//   fs = 250
//   tr = 2.16
//   geometry = 64 20 25 30 64 64
//   subject s01: s01/x0000.s2vt s01/y0000.s2vt
//
// Raw manifests (`kind = raw`) point at an EEG tensor [C, samples] and a BOLD
// series [V, D, H, W]; `volume_target = D H W` requests DCT down-sampling.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s2v/geometry.hpp"
#include "s2v/tensor.hpp"

namespace s2v::data {

enum class ManifestKind { kPaired, kRaw };

struct PairFiles {
  std::filesystem::path first;   // spectrogram (paired) or EEG recording (raw)
  std::filesystem::path second;  // volume (paired) or BOLD series (raw)
};

struct SubjectEntry {
  std::string id;
  std::vector<PairFiles> files;
};

struct DatasetManifest {
  std::string name;
  ManifestKind kind = ManifestKind::kPaired;
  double fs_hz = 0;
  double tr_s = 0;
  Geometry geometry;  // paired manifests
  std::optional<std::array<std::size_t, 3>> volume_target;  // raw manifests
  std::vector<SubjectEntry> subjects;
  std::filesystem::path base_dir;

  std::size_t pair_count() const;
  std::vector<std::string> subject_ids() const;
  const SubjectEntry& subject(const std::string& id) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               const std::string& origin = "<manifest>");
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& m);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Every referenced file exists and, for paired manifests, carries the
// declared [C,T,F] / [D,H,W] extents. Throws DataError naming the file.
void validate_manifest(const DatasetManifest& m);

struct Sample {
  Tensor input;   // [C,T,F]
  Tensor target;  // [D,H,W]
  std::string subject;
};

std::vector<Sample> load_samples(const DatasetManifest& m,
                                 const std::vector<std::string>& subject_ids);

}  // namespace s2v::data
