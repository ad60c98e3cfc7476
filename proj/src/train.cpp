#include "s2v/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <omp.h>

#include "s2v/errors.hpp"
#include "s2v/ops.hpp"
#include "s2v/s2vt.hpp"
#include "s2v/strings.hpp"

namespace s2v::train {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix(mix(mix(seed) ^ a) ^ b);
}

// Sum of `terms` separable low-frequency cosines over a row-major grid.
std::vector<double> smooth_field(const std::vector<std::size_t>& dims, std::size_t terms,
                                 std::mt19937_64& rng) {
  std::size_t total = 1;
  for (auto d : dims) total *= d;
  std::vector<double> out(total, 0.0);
  std::uniform_real_distribution<double> phase(0, 2 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);
  std::uniform_int_distribution<int> freq(0, 2);
  for (std::size_t k = 0; k < terms; ++k) {
    const double a = amp(rng);
    std::vector<double> f(dims.size()), p(dims.size());
    for (std::size_t ax = 0; ax < dims.size(); ++ax) {
      f[ax] = freq(rng);
      p[ax] = phase(rng);
    }
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t rem = i;
      double v = a;
      for (std::size_t ax = dims.size(); ax-- > 0;) {
        const std::size_t c = rem % dims[ax];
        rem /= dims[ax];
        v *= std::cos(std::numbers::pi * f[ax] * (c + 0.5) / dims[ax] + p[ax]);
      }
      out[i] += v;
    }
  }
  return out;
}

void normalize_in_place(std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, range = *hi - *lo;
  for (auto& x : v) x = range > 0 ? (x - a) / range : 0.0;
}

std::string subject_name(std::size_t s) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%02zu", s + 1);
  return buf;
}

double clip_scale(const Gradients& g, double max_norm) {
  double sq = 0;
  for (const auto& b : g)
    for (double v : b) sq += v * v;
  const double norm = std::sqrt(sq);
  return norm > max_norm ? max_norm / norm : 1.0;
}

Config checkpoint_config(const TrainSetup& s, const Config* run_config) {
  Config c = run_config != nullptr ? *run_config : Config();
  const auto& m = s.model;
  c.set("data.geometry", format_geometry(m.geometry));
  c.set("model.embed", std::to_string(m.embed));
  c.set("model.heads", std::to_string(m.heads));
  c.set("model.stages", std::to_string(m.stages));
  c.set("model.attention_dropout", strings::format_double(m.attention_dropout));
  c.set("model.vss_blocks", std::to_string(m.vss_blocks));
  c.set("model.state", std::to_string(m.state));
  c.set("model.vss_expand", std::to_string(m.vss_expand));
  c.set("model.scan", m.scan == ops::ScanVariant::kSequential ? "sequential" : "chunked");
  c.set("model.scan_chunk", std::to_string(m.chunk));
  c.set("loss.lambda1", strings::format_double(s.loss.lambda1));
  c.set("loss.lambda2", strings::format_double(s.loss.lambda2));
  c.set("ssim.window", std::to_string(s.ssim.window));
  c.set("ssim.c1", strings::format_double(s.ssim.c1));
  c.set("ssim.c2", strings::format_double(s.ssim.c2));
  c.set("ssim.mode", metrics::ssim_mode_name(s.ssim.mode));
  return c;
}

}  // namespace

// ---- optimizer -----------------------------------------------------------

AdamW::AdamW(const ParamStore& params, const AdamWConfig& cfg) : cfg_(cfg) {
  if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1 || cfg.eps <= 0 ||
      cfg.weight_decay < 0) {
    throw ConfigError("adamw: betas must lie in [0,1), eps > 0, weight_decay >= 0");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.at(i).size(), 0.0);
    v_.emplace_back(params.at(i).size(), 0.0);
  }
}

void AdamW::step(ParamStore& params, const Gradients& grads, double lr) {
  if (grads.size() != params.size()) throw DimensionError("adamw: gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params.at(i).size()) {
      throw DimensionError("adamw: gradient of " + params.name(i) + " has wrong size");
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw NumericError("adamw: non-finite gradient for " + params.name(i) + "; step rejected");
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = params.at(i).mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[i][k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      p[k] *= decay;
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

// ---- schedule ------------------------------------------------------------

double lr_at(std::size_t epoch, double frac, const ScheduleConfig& cfg) {
  if (cfg.restart_period == 0) throw ConfigError("restart period must be >= 1");
  if (cfg.min_lr > cfg.base_lr) throw ConfigError("min_lr must not exceed the base lr");
  if (epoch >= cfg.total_epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " is outside [0, " +
                      std::to_string(cfg.total_epochs) + ")");
  }
  if (frac < 0 || frac >= 1) throw ConfigError("lr_at: step fraction must lie in [0,1)");
  const double period = static_cast<double>(cfg.restart_period);
  const double t = (static_cast<double>(epoch % cfg.restart_period) + frac) / period;
  return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// ---- splits --------------------------------------------------------------

SplitMode parse_split_mode(const std::string& s) {
  if (s == "fixed") return SplitMode::kFixed;
  if (s == "loso") return SplitMode::kLoso;
  if (s == "none") return SplitMode::kNone;
  throw ConfigError("split mode must be fixed, loso or none; got '" + s + "'");
}

SplitPlan make_splits(std::vector<std::string> ids, SplitMode mode, std::size_t k_train,
                      std::size_t k_test, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ConfigError("duplicate subject ids");
  }
  SplitPlan plan;
  plan.mode = mode;
  switch (mode) {
    case SplitMode::kLoso:
      if (ids.size() < 2) {
        throw ConfigError("loso needs at least 2 subjects, have " + std::to_string(ids.size()));
      }
      for (const auto& held : ids) {
        Fold f;
        for (const auto& id : ids) (id == held ? f.test : f.train).push_back(id);
        plan.folds.push_back(std::move(f));
      }
      break;
    case SplitMode::kFixed: {
      if (k_train == 0 || k_test == 0 || ids.size() < k_train + k_test) {
        throw ConfigError("fixed split " + std::to_string(k_train) + "/" + std::to_string(k_test) +
                          " needs that many subjects, have " + std::to_string(ids.size()));
      }
      std::mt19937_64 rng(seed);
      std::shuffle(ids.begin(), ids.end(), rng);
      Fold f;
      f.train.assign(ids.begin(), ids.begin() + static_cast<long>(k_train));
      f.test.assign(ids.begin() + static_cast<long>(k_train),
                    ids.begin() + static_cast<long>(k_train + k_test));
      std::sort(f.train.begin(), f.train.end());
      std::sort(f.test.begin(), f.test.end());
      plan.folds.push_back(std::move(f));
      break;
    }
    case SplitMode::kNone:
      if (ids.empty()) throw ConfigError("no subjects to train on");
      plan.folds.push_back({ids, {}});
      break;
  }
  return plan;
}

// ---- synthetic data ------------------------------------------------------

std::vector<data::Sample> synth_pairs(const SynthSpec& spec) {
  const auto& g = spec.geometry;
  if (g.channels == 0 || g.time == 0 || g.freq == 0 || g.depth == 0 || g.height == 0 ||
      g.width == 0) {
    throw ConfigError("synthetic geometry extents must be positive");
  }
  const std::size_t in_size = g.channels * g.time * g.freq;
  const std::size_t out_size = g.depth * g.height * g.width;
  constexpr std::size_t kLatent = 6;

  // The planted map, shared by every subject.
  std::mt19937_64 map_rng(derive(spec.seed, 0x6d6170));
  const auto base = smooth_field({g.depth, g.height, g.width}, 4, map_rng);
  std::vector<std::vector<double>> basis;
  for (std::size_t k = 0; k < kLatent; ++k) {
    basis.push_back(smooth_field({g.depth, g.height, g.width}, 3, map_rng));
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> proj(kLatent * in_size);
  const double proj_scale = 4.0 / std::sqrt(static_cast<double>(in_size));
  for (auto& v : proj) v = gauss(map_rng) * proj_scale;

  std::vector<data::Sample> out;
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    for (std::size_t j = 0; j < spec.pairs_per_subject; ++j) {
      std::mt19937_64 rng(derive(spec.seed, s + 1, j + 1));
      std::vector<double> x;
      x.reserve(in_size);
      for (std::size_t c = 0; c < g.channels; ++c) {
        auto field = smooth_field({g.time, g.freq}, 3, rng);
        for (std::size_t t = 0; t < g.time; ++t)
          for (std::size_t f = 0; f < g.freq; ++f) {
            // Power falls off with frequency, as in EEG spectra.
            const double envelope = 1.0 / (1.0 + 2.0 * f / static_cast<double>(g.freq));
            x.push_back(envelope * (1.5 + field[t * g.freq + f]) + spec.noise * gauss(rng));
          }
      }
      normalize_in_place(x);
      std::vector<double> y = base;
      for (std::size_t k = 0; k < kLatent; ++k) {
        double z = 0;
        for (std::size_t i = 0; i < in_size; ++i) z += proj[k * in_size + i] * (x[i] - 0.5);
        for (std::size_t i = 0; i < out_size; ++i) y[i] += z * basis[k][i];
      }
      for (auto& v : y) v += spec.noise * gauss(rng);
      normalize_in_place(y);
      out.push_back({Tensor({g.channels, g.time, g.freq}, std::move(x)),
                     Tensor({g.depth, g.height, g.width}, std::move(y)), subject_name(s)});
    }
  }
  return out;
}

data::DatasetManifest synth_dataset(const SynthSpec& spec, const fs::path& dir) {
  const auto samples = synth_pairs(spec);
  data::DatasetManifest m;
  m.name = "synthetic";
  m.kind = data::ManifestKind::kPaired;
  m.fs_hz = 250;
  m.tr_s = 2;
  m.geometry = spec.geometry;
  m.base_dir = dir;
  fs::create_directories(dir);
  std::size_t index = 0;
  for (const auto& s : samples) {
    if (m.subjects.empty() || m.subjects.back().id != s.subject) {
      m.subjects.push_back({s.subject, {}});
      index = 0;
      fs::create_directories(dir / s.subject);
    }
    char xname[32], yname[32];
    std::snprintf(xname, sizeof(xname), "x%04zu.s2vt", index);
    std::snprintf(yname, sizeof(yname), "y%04zu.s2vt", index);
    const fs::path xp = fs::path(s.subject) / xname, yp = fs::path(s.subject) / yname;
    io::write_s2vt(dir / xp, s.input);
    io::write_s2vt(dir / yp, s.target);
    m.subjects.back().files.push_back({xp, yp});
    ++index;
  }
  data::write_manifest(dir / "manifest.txt", m);
  return m;
}

data::DatasetManifest synth_raw_dataset(const RawSynthSpec& spec, const fs::path& dir) {
  if (spec.channels == 0 || spec.volumes == 0 || !(spec.fs_hz > 0) || !(spec.tr_s > 0)) {
    throw ConfigError("raw synthesis needs positive channels, volumes, fs and tr");
  }
  const auto [d, h, w] = spec.volume;
  const std::size_t vol_size = d * h * w;
  const std::size_t per_window = static_cast<std::size_t>(std::llround(spec.fs_hz * spec.tr_s));
  const std::size_t n = per_window * spec.volumes;
  const std::vector<double> bands{6.0, 10.0, 20.0, 40.0};

  std::mt19937_64 map_rng(derive(spec.seed, 0x726177));
  const auto base = smooth_field({d, h, w}, 4, map_rng);
  std::vector<std::vector<double>> basis;
  for (std::size_t k = 0; k < bands.size(); ++k) basis.push_back(smooth_field({d, h, w}, 3, map_rng));

  data::DatasetManifest m;
  m.name = "synthetic-raw";
  m.kind = data::ManifestKind::kRaw;
  m.fs_hz = spec.fs_hz;
  m.tr_s = spec.tr_s;
  m.base_dir = dir;
  fs::create_directories(dir);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0), phase(0.0, 2 * std::numbers::pi);
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    std::mt19937_64 rng(derive(spec.seed, s + 1));
    // Band amplitude per channel and TR window.
    std::vector<double> amp(spec.channels * bands.size() * spec.volumes);
    for (auto& a : amp) a = 0.5 + unit(rng);
    std::vector<double> eeg(spec.channels * n);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      std::vector<double> ph(bands.size());
      for (auto& p : ph) p = phase(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t v = i / per_window;
        const double t = static_cast<double>(i) / spec.fs_hz;
        double x = 0;
        for (std::size_t k = 0; k < bands.size(); ++k) {
          x += amp[(c * bands.size() + k) * spec.volumes + v] *
               std::sin(2 * std::numbers::pi * bands[k] * t + ph[k]);
        }
        eeg[c * n + i] = 20.0 * x + spec.noise * 20.0 * gauss(rng);
      }
    }
    std::vector<double> bold(spec.volumes * vol_size);
    for (std::size_t v = 0; v < spec.volumes; ++v) {
      for (std::size_t i = 0; i < vol_size; ++i) {
        double y = base[i];
        for (std::size_t k = 0; k < bands.size(); ++k) {
          double mean_amp = 0;
          for (std::size_t c = 0; c < spec.channels; ++c) {
            mean_amp += amp[(c * bands.size() + k) * spec.volumes + v];
          }
          y += mean_amp / static_cast<double>(spec.channels) * basis[k][i];
        }
        bold[v * vol_size + i] = 600.0 + 40.0 * y + spec.noise * 40.0 * gauss(rng);
      }
    }
    const std::string id = subject_name(s);
    fs::create_directories(dir / id);
    const fs::path ep = fs::path(id) / "eeg.s2vt", bp = fs::path(id) / "bold.s2vt";
    io::write_s2vt(dir / ep, Tensor({spec.channels, n}, std::move(eeg)));
    io::write_s2vt(dir / bp, Tensor({spec.volumes, d, h, w}, std::move(bold)));
    m.subjects.push_back({id, {{ep, bp}}});
  }
  data::write_manifest(dir / "manifest.txt", m);
  return m;
}

// ---- training ------------------------------------------------------------

TrainSetup TrainSetup::from_config(const Config& cfg, const Geometry& g) {
  TrainSetup s;
  s.model = cfg.model(g);
  s.loss = cfg.loss();
  s.ssim = cfg.ssim();
  s.optim = {cfg.real("optim.weight_decay"), cfg.real("optim.beta1"), cfg.real("optim.beta2"),
             cfg.real("optim.eps")};
  s.schedule = {cfg.real("optim.lr"), cfg.size("schedule.restart_period"),
                cfg.real("schedule.min_lr"), cfg.size("train.epochs")};
  s.batch_size = cfg.size("train.batch_size");
  s.grad_clip = cfg.real("optim.grad_clip");
  s.workers = std::max<std::size_t>(1, cfg.size("run.workers"));
  s.seed = static_cast<std::uint64_t>(cfg.integer("run.seed"));
  return s;
}

BatchOutcome batch_gradients(const TrainSetup& setup, const ParamStore& params,
                             const std::vector<const data::Sample*>& batch,
                             std::optional<std::uint64_t> dropout_seed) {
  if (batch.empty()) throw DataError("empty batch");
  const std::size_t workers = std::max<std::size_t>(1, std::min(setup.workers, batch.size()));
  std::vector<ParamStore> replicas;
  for (std::size_t w = 0; w < workers; ++w) replicas.push_back(params.clone());

  BatchOutcome out;
  for (std::size_t i = 0; i < params.size(); ++i) out.grads.emplace_back(params.at(i).size(), 0.0);
  std::vector<Gradients> slots(workers);
  std::vector<double> losses(workers);
  std::vector<std::exception_ptr> errors(workers);

  for (std::size_t start = 0; start < batch.size(); start += workers) {
    const std::size_t count = std::min(workers, batch.size() - start);
#pragma omp parallel for num_threads(static_cast<int>(count)) schedule(static, 1)
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(count); ++j) {
      const std::size_t slot = static_cast<std::size_t>(j);
      try {
        ParamStore& p = replicas[slot];
        const data::Sample& s = *batch[start + slot];
        std::optional<std::uint64_t> seed;
        if (dropout_seed) seed = derive(*dropout_seed, start + slot);
        Tape tape;
        double loss = 0;
        {
          TapeScope scope(tape);
          const auto pred = forward(setup.model, p, s.input, seed);
          const auto l = metrics::hybrid_loss(pred, s.target, setup.loss, setup.ssim);
          loss = l.item();
          tape.backward(l);
        }
        losses[slot] = loss;
        auto& g = slots[slot];
        g.resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          const Tensor& t = p.at(i);
          if (t.has_grad()) {
            g[i].assign(t.grad().begin(), t.grad().end());
          } else {
            g[i].assign(t.size(), 0.0);
          }
        }
        p.zero_grad();
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    }
    for (std::size_t j = 0; j < count; ++j) {
      if (errors[j]) std::rethrow_exception(errors[j]);
      out.loss += losses[j];
      for (std::size_t i = 0; i < out.grads.size(); ++i)
        for (std::size_t k = 0; k < out.grads[i].size(); ++k) out.grads[i][k] += slots[j][i][k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& g : out.grads)
    for (auto& v : g) v *= inv;
  return out;
}

std::vector<metrics::SampleScore> evaluate(const ModelConfig& model, const ParamStore& params,
                                           const std::vector<data::Sample>& samples,
                                           const metrics::SsimConfig& ssim, std::size_t workers) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  const auto& g = model.geometry;
  for (const auto& s : samples) {
    if (s.input.shape() != Shape{g.channels, g.time, g.freq} ||
        s.target.shape() != Shape{g.depth, g.height, g.width}) {
      throw ConfigError("sample of subject '" + s.subject + "' (" + shape_str(s.input.shape()) +
                        " -> " + shape_str(s.target.shape()) +
                        ") does not match model geometry " + g.str());
    }
  }
  std::vector<metrics::SampleScore> scores(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  const int threads = static_cast<int>(std::max<std::size_t>(1, workers));
#pragma omp parallel for num_threads(threads) schedule(static, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(samples.size()); ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    try {
      NoGradScope no_grad;
      const auto pred = forward(model, params, s.input);
      scores[static_cast<std::size_t>(i)] = {s.subject, metrics::ssim(pred, s.target, ssim).item(),
                                             metrics::psnr(pred, s.target)};
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return scores;
}

std::vector<metrics::SampleScore> score_predictions(const std::vector<Tensor>& predictions,
                                                    const std::vector<data::Sample>& truth,
                                                    const metrics::SsimConfig& ssim) {
  if (truth.empty()) throw DataError("evaluation set is empty");
  if (predictions.size() != truth.size()) {
    throw DataError(std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(truth.size()) + " targets");
  }
  NoGradScope no_grad;
  std::vector<metrics::SampleScore> scores;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predictions[i].shape() != truth[i].target.shape()) {
      throw DataError("prediction " + std::to_string(i) + " has shape " +
                      shape_str(predictions[i].shape()) + ", target has " +
                      shape_str(truth[i].target.shape()));
    }
    scores.push_back({truth[i].subject, metrics::ssim(predictions[i], truth[i].target, ssim).item(),
                      metrics::psnr(predictions[i], truth[i].target)});
  }
  return scores;
}

void save_checkpoint(const fs::path& dir, const ParamStore& params, const Config& run_config,
                     const std::string& state) {
  fs::remove_all(dir);
  params.save(dir);
  std::ofstream cfg(dir / "config.txt", std::ios::trunc);
  cfg << run_config.format();
  std::ofstream st(dir / "state.txt", std::ios::trunc);
  st << state;
  if (!cfg || !st) throw DataError("cannot write checkpoint metadata in " + dir.string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("checkpoint directory " + dir.string() + " not found");
  Config cfg;
  cfg.merge_file(dir / "config.txt");
  const auto& geometry_text = cfg.text("data.geometry");
  if (geometry_text.empty()) throw DataError(dir.string() + ": checkpoint records no geometry");
  const auto model = cfg.model(parse_geometry(geometry_text));
  auto params = init_model(model, 0);
  params.load(dir);
  return {cfg, model, std::move(params)};
}

TrainResult train(const TrainSetup& setup, ParamStore& params,
                  const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& eval_set,
                  const std::optional<fs::path>& out_dir, const Config* run_config,
                  std::ostream* echo) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (setup.batch_size == 0) throw ConfigError("batch size must be positive");
  setup.loss.validate();
  setup.ssim.validate();
  const auto& eval_samples = eval_set.empty() ? train_set : eval_set;
  const Config ckpt_config = checkpoint_config(setup, run_config);

  std::ofstream log;
  auto emit = [&](const std::string& line) {
    if (log.is_open()) log << line << '\n' << std::flush;
    if (echo != nullptr) *echo << line << '\n' << std::flush;
  };
  if (out_dir) {
    fs::create_directories(*out_dir);
    log.open(*out_dir / "train.log", std::ios::trunc);
    if (!log) throw DataError("cannot write " + (*out_dir / "train.log").string());
  }
  const auto& o = setup.optim;
  const auto& sc = setup.schedule;
  const std::size_t steps_per_epoch = (train_set.size() + setup.batch_size - 1) / setup.batch_size;
  emit("# lambda1 = " + strings::format_double(setup.loss.lambda1));
  emit("# lambda2 = " + strings::format_double(setup.loss.lambda2));
  emit("# optimizer = adamw beta1=" + strings::format_double(o.beta1) +
       " beta2=" + strings::format_double(o.beta2) + " eps=" + strings::format_double(o.eps) +
       " weight_decay=" + strings::format_double(o.weight_decay) +
       " grad_clip=" + strings::format_double(setup.grad_clip));
  emit("# schedule = cosine-restarts base_lr=" + strings::format_double(sc.base_lr) +
       " min_lr=" + strings::format_double(sc.min_lr) +
       " period=" + std::to_string(sc.restart_period) + " epochs=" + std::to_string(sc.total_epochs));
  emit("# data = train " + std::to_string(train_set.size()) + " eval " +
       std::to_string(eval_samples.size()) + (eval_set.empty() ? " (training set)" : "") +
       " batch " + std::to_string(setup.batch_size) + " steps/epoch " +
       std::to_string(steps_per_epoch));
  emit("# model = " + std::to_string(params.scalar_count()) + " parameters in " +
       std::to_string(params.size()) + " tensors, geometry " + setup.model.geometry.str());
  emit("# seed = " + std::to_string(setup.seed) + " workers = " + std::to_string(setup.workers) +
       (setup.workers == 1 ? " (deterministic replay)"
                           : " (replay is guaranteed only with workers = 1)"));
  emit("# columns: epoch,step,lr,loss,eval_ssim,eval_psnr; per-step rows leave eval columns '-',"
       " per-epoch rows leave lr '-' and report the epoch's mean loss");

  AdamW opt(params, setup.optim);
  TrainResult result;
  result.best_ssim = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < sc.total_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(derive(setup.seed, 0x73687566, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (std::size_t j = 0; j < steps_per_epoch; ++j) {
      const double lr = lr_at(epoch, static_cast<double>(j) / steps_per_epoch, sc);
      std::vector<const data::Sample*> batch;
      for (std::size_t k = j * setup.batch_size;
           k < std::min(order.size(), (j + 1) * setup.batch_size); ++k) {
        batch.push_back(&train_set[order[k]]);
      }
      ++global_step;
      std::optional<std::uint64_t> dropout;
      if (setup.model.attention_dropout > 0) dropout = derive(setup.seed, 0x64726f70, global_step);
      BatchOutcome b;
      try {
        b = batch_gradients(setup, params, batch, dropout);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " step " +
                           std::to_string(global_step) + ": " + e.what() +
                           (out_dir ? "; last good checkpoints kept in " + out_dir->string() : ""));
      }
      if (!std::isfinite(b.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(global_step) +
                           (out_dir ? "; last good checkpoints kept in " + out_dir->string() : ""));
      }
      if (setup.grad_clip > 0) {
        const double f = clip_scale(b.grads, setup.grad_clip);
        for (auto& g : b.grads)
          for (auto& v : g) v *= f;
      }
      opt.step(params, b.grads, lr);
      epoch_loss += b.loss;
      result.steps.push_back({epoch, global_step, lr, b.loss});
      emit(std::to_string(epoch) + "," + std::to_string(global_step) + "," +
           strings::format_double(lr) + "," + strings::format_double(b.loss) + ",-,-");
    }
    const auto scores = evaluate(setup.model, params, eval_samples, setup.ssim, setup.workers);
    std::vector<double> ssims, psnrs;
    for (const auto& s : scores) {
      ssims.push_back(s.ssim);
      psnrs.push_back(s.psnr);
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(steps_per_epoch),
                    metrics::mean_std(ssims).mean, metrics::mean_std(psnrs).mean};
    result.epochs.push_back(rec);
    emit(std::to_string(epoch) + "," + std::to_string(global_step) + ",-," +
         strings::format_double(rec.train_loss) + "," + strings::format_double(rec.eval_ssim) +
         "," + strings::format_double(rec.eval_psnr));
    const std::string state = "epoch = " + std::to_string(epoch) + "\nstep = " +
                              std::to_string(global_step) + "\neval_ssim = " +
                              strings::format_double(rec.eval_ssim) + "\neval_psnr = " +
                              strings::format_double(rec.eval_psnr) + "\n";
    if (rec.eval_ssim > result.best_ssim) {
      result.best_ssim = rec.eval_ssim;
      result.best_epoch = epoch;
      if (out_dir) save_checkpoint(*out_dir / "best.ckpt", params, ckpt_config, state);
    }
    if (out_dir) save_checkpoint(*out_dir / "last.ckpt", params, ckpt_config, state);
  }
  return result;
}

}  // namespace s2v::train
