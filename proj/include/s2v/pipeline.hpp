#pragma once

// Glue between the run configuration and the library: raw-session
// preprocessing into a paired dataset, geometry resolution, and batch
// prediction.

#include <filesystem>
#include <string>
#include <vector>

#include "s2v/config.hpp"
#include "s2v/dataset.hpp"
#include "s2v/dsp.hpp"
#include "s2v/params.hpp"

namespace s2v::pipeline {

dsp::PairingConfig pairing_from_config(const Config& cfg);

struct SubjectPairs {
  std::string subject;
  std::size_t pairs = 0;
  dsp::PairingReport report;
};

// Runs build_pairs over every (eeg, bold) entry of a raw manifest and writes
// `<subject>/xNNNN.s2vt`, `<subject>/yNNNN.s2vt` and `manifest.txt` under
// `out_dir`. A volume target in `cfg` overrides the manifest's. Errors carry
// the subject and file they came from.
std::vector<SubjectPairs> preprocess_dataset(const data::DatasetManifest& raw,
                                             const dsp::PairingConfig& cfg,
                                             const std::filesystem::path& out_dir);

// The manifest geometry, checked against `data.geometry` when that is set.
Geometry resolve_geometry(const Config& cfg, const data::DatasetManifest& m);

// One prediction per input of `m` for the listed subjects, written as
// `<subject>/pNNNN.s2vt` under `out_dir` with a paired manifest
// (input, prediction). Returns that manifest.
data::DatasetManifest predict_dataset(const ModelConfig& model, const ParamStore& params,
                                      const data::DatasetManifest& m,
                                      const std::vector<std::string>& subjects,
                                      const std::filesystem::path& out_dir,
                                      std::size_t workers = 1);

}  // namespace s2v::pipeline
