#include "s2v/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>

#include "s2v/errors.hpp"
#include "s2v/model.hpp"
#include "s2v/s2vt.hpp"
#include "s2v/strings.hpp"
#include "s2v/tensor.hpp"

namespace s2v::pipeline {

namespace fs = std::filesystem;

namespace {

std::string numbered(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%04zu.s2vt", prefix, i);
  return buf;
}

}  // namespace

dsp::PairingConfig pairing_from_config(const Config& cfg) {
  dsp::PairingConfig p;
  p.mode = cfg.text("dsp.pairing") == "lag" ? dsp::PairingMode::kLagAligned
                                            : dsp::PairingMode::kTrWindows;
  p.stft.frame_len = cfg.size("dsp.frame");
  p.stft.hop = cfg.size("dsp.hop");
  p.stft.cutoff_hz = cfg.real("dsp.cutoff_hz");
  p.span_s = cfg.real("dsp.span_s");
  p.lag_s = cfg.real("dsp.lag_s");
  const auto target = strings::parse_sizes(cfg.text("dsp.volume_target"));
  if (!target.empty()) {
    if (target.size() != 3) throw ConfigError("dsp.volume_target needs three extents: D H W");
    p.volume_target = std::array<std::size_t, 3>{target[0], target[1], target[2]};
  }
  return p;
}

std::vector<SubjectPairs> preprocess_dataset(const data::DatasetManifest& raw,
                                             const dsp::PairingConfig& cfg,
                                             const fs::path& out_dir) {
  if (raw.kind != data::ManifestKind::kRaw) {
    throw ConfigError("manifest '" + raw.name + "' is already paired");
  }
  data::validate_manifest(raw);
  dsp::PairingConfig pairing = cfg;
  if (!pairing.volume_target) pairing.volume_target = raw.volume_target;

  data::DatasetManifest out;
  out.name = raw.name;
  out.kind = data::ManifestKind::kPaired;
  out.fs_hz = raw.fs_hz;
  out.tr_s = raw.tr_s;
  out.base_dir = out_dir;
  bool have_geometry = false;
  std::vector<SubjectPairs> summary;
  fs::create_directories(out_dir);

  for (const auto& subject : raw.subjects) {
    SubjectPairs row{subject.id, 0, {}};
    data::SubjectEntry entry{subject.id, {}};
    fs::create_directories(out_dir / subject.id);
    for (const auto& files : subject.files) {
      const auto eeg_path = raw.resolve(files.first);
      std::vector<dsp::SamplePair> pairs;
      dsp::PairingReport report;
      try {
        dsp::EegRecording rec{io::read_s2vt(eeg_path), raw.fs_hz, subject.id};
        pairs = dsp::build_pairs(rec, io::read_s2vt(raw.resolve(files.second)), raw.tr_s,
                                 pairing, &report);
      } catch (const Error& e) {
        const std::string where = "subject '" + subject.id + "', " + eeg_path.string() + ": ";
        if (e.code() == ExitCode::kData) throw DataError(where + e.what());
        if (e.code() == ExitCode::kNumeric) throw NumericError(where + e.what());
        throw ConfigError(where + e.what());
      }
      for (const auto& pair : pairs) {
        const auto& x = pair.input.data.shape();
        const auto& y = pair.target.data.shape();
        const Geometry g{x[0], x[1], x[2], y[0], y[1], y[2]};
        if (!have_geometry) {
          out.geometry = g;
          have_geometry = true;
        } else if (g != out.geometry) {
          throw DataError("subject '" + subject.id + "', " + eeg_path.string() +
                          ": pair geometry " + g.str() + " differs from " + out.geometry.str());
        }
        const std::size_t k = entry.files.size();
        const fs::path xr = fs::path(subject.id) / numbered('x', k);
        const fs::path yr = fs::path(subject.id) / numbered('y', k);
        io::write_s2vt(out_dir / xr, pair.input.data);
        io::write_s2vt(out_dir / yr, pair.target.data);
        entry.files.push_back({xr, yr});
      }
      row.report.volumes += report.volumes;
      row.report.windows += report.windows;
      row.report.pairs += report.pairs;
      row.report.skipped_early += report.skipped_early;
      row.report.skipped_late += report.skipped_late;
    }
    row.pairs = entry.files.size();
    out.subjects.push_back(std::move(entry));
    summary.push_back(row);
  }
  data::write_manifest(out_dir / "manifest.txt", out);
  return summary;
}

Geometry resolve_geometry(const Config& cfg, const data::DatasetManifest& m) {
  if (m.kind != data::ManifestKind::kPaired) {
    throw ConfigError("manifest '" + m.name + "' holds raw recordings; run preprocess first");
  }
  const std::string declared = cfg.text("data.geometry");
  if (!strings::trim(declared).empty()) {
    const Geometry g = parse_geometry(declared);
    if (g != m.geometry) {
      throw ConfigError("data.geometry " + g.str() + " does not match manifest geometry " +
                        m.geometry.str());
    }
  }
  return m.geometry;
}

data::DatasetManifest predict_dataset(const ModelConfig& model, const ParamStore& params,
                                      const data::DatasetManifest& m,
                                      const std::vector<std::string>& subjects,
                                      const fs::path& out_dir, std::size_t workers) {
  if (m.geometry != model.geometry) {
    throw ConfigError("manifest geometry " + m.geometry.str() +
                      " does not match checkpoint geometry " + model.geometry.str());
  }
  data::DatasetManifest out = m;
  out.base_dir = out_dir;
  out.subjects.clear();
  fs::create_directories(out_dir);
  const Shape in_shape{m.geometry.channels, m.geometry.time, m.geometry.freq};
  for (const auto& id : subjects) {
    const auto& entry = m.subject(id);
    fs::create_directories(out_dir / id);
    std::vector<Tensor> preds(entry.files.size());
    std::vector<std::exception_ptr> errors(entry.files.size());
    const int threads = static_cast<int>(std::max<std::size_t>(1, workers));
#pragma omp parallel for num_threads(threads) schedule(static, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(entry.files.size()); ++i) {
      const auto k = static_cast<std::size_t>(i);
      try {
        const auto path = m.resolve(entry.files[k].first);
        const Tensor x = io::read_s2vt(path);
        if (x.shape() != in_shape) {
          throw DataError(path.string() + ": shape " + shape_str(x.shape()) +
                          " does not match geometry " + m.geometry.str());
        }
        NoGradScope no_grad;
        preds[k] = forward(model, params, x);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    data::SubjectEntry row{id, {}};
    for (std::size_t k = 0; k < preds.size(); ++k) {
      const fs::path rel = fs::path(id) / numbered('p', k);
      io::write_s2vt(out_dir / rel, preds[k]);
      row.files.push_back({fs::absolute(m.resolve(entry.files[k].first)), rel});
    }
    out.subjects.push_back(std::move(row));
  }
  data::write_manifest(out_dir / "manifest.txt", out);
  return out;
}

}  // namespace s2v::pipeline
