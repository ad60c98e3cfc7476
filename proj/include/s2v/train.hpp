#pragma once

// Training harness: AdamW, cosine schedule with hard restarts, subject
// splits, synthetic datasets, the epoch loop with checkpointing, and
// evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "s2v/config.hpp"
#include "s2v/dataset.hpp"
#include "s2v/metrics.hpp"
#include "s2v/model.hpp"
#include "s2v/params.hpp"

namespace s2v::train {

// ---- optimizer -----------------------------------------------------------

struct AdamWConfig {
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using Gradients = std::vector<std::vector<double>>;  // one block per parameter

class AdamW {
 public:
  AdamW(const ParamStore& params, const AdamWConfig& cfg);

  // Decoupled decay p *= (1 - lr*wd), then the bias-corrected Adam update.
  // Throws NumericError (leaving parameters untouched) on a non-finite
  // gradient.
  void step(ParamStore& params, const Gradients& grads, double lr);
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  Gradients m_, v_;
};

// ---- schedule ------------------------------------------------------------

struct ScheduleConfig {
  double base_lr = 1e-3;
  std::size_t restart_period = 10;
  double min_lr = 0.0;
  std::size_t total_epochs = 50;
};

// t = (epoch mod period + frac) / period;
// lr = min + (base - min) * (1 + cos(pi t)) / 2.
double lr_at(std::size_t epoch, double frac, const ScheduleConfig& cfg);

// ---- splits --------------------------------------------------------------

enum class SplitMode { kFixed, kLoso, kNone };

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> test;  // empty for kNone
};

struct SplitPlan {
  SplitMode mode = SplitMode::kFixed;
  std::vector<Fold> folds;
};

SplitMode parse_split_mode(const std::string& s);

// loso: one fold per subject in sorted order. fixed: sorted ids shuffled by
// `seed`, first k_train train, next k_test test. none: all subjects train.
SplitPlan make_splits(std::vector<std::string> subject_ids, SplitMode mode,
                      std::size_t k_train = 16, std::size_t k_test = 4, std::uint64_t seed = 0);

// ---- synthetic data ------------------------------------------------------

struct SynthSpec {
  Geometry geometry{4, 8, 32, 3, 8, 8};
  std::size_t subjects = 4;
  std::size_t pairs_per_subject = 8;
  double noise = 0.01;
  std::uint64_t seed = 0;
};

// Spectrogram-like [C,T,F] inputs and [D,H,W] volumes in [0,1]. Each volume
// is a fixed smooth random affine image of its spectrogram (shared by every
// subject for a given seed) plus noise, then min-max normalized.
std::vector<data::Sample> synth_pairs(const SynthSpec& spec);

// Writes synth_pairs as S2VT files plus `manifest.txt` under `dir`.
data::DatasetManifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& dir);

struct RawSynthSpec {
  std::size_t subjects = 2;
  std::size_t channels = 4;
  double fs_hz = 250;
  double tr_s = 2.0;
  std::size_t volumes = 16;
  std::array<std::size_t, 3> volume{4, 8, 8};
  double noise = 0.01;
  std::uint64_t seed = 0;
};

// Raw sessions: EEG [C, round(fs*tr*volumes)] and BOLD [V,D,H,W].
data::DatasetManifest synth_raw_dataset(const RawSynthSpec& spec,
                                        const std::filesystem::path& dir);

// ---- training ------------------------------------------------------------

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global, 1-based
  double lr = 0;
  double loss = 0;       // mean hybrid loss of the batch
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean of the epoch's batch losses
  double eval_ssim = 0;
  double eval_psnr = 0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_ssim = 0;
};

struct TrainSetup {
  ModelConfig model;
  metrics::LossWeights loss;
  metrics::SsimConfig ssim;
  AdamWConfig optim;
  ScheduleConfig schedule;
  std::size_t batch_size = 16;
  double grad_clip = 0;
  std::size_t workers = 1;
  std::uint64_t seed = 0;

  static TrainSetup from_config(const Config& cfg, const Geometry& g);
};

// Mean loss over the batch and the matching mean gradient. Per-sample
// gradients are computed on private parameter replicas and summed in sample
// order, so the result does not depend on `workers`.
struct BatchOutcome {
  double loss = 0;
  Gradients grads;
};
BatchOutcome batch_gradients(const TrainSetup& setup, const ParamStore& params,
                             const std::vector<const data::Sample*>& batch,
                             std::optional<std::uint64_t> dropout_seed = std::nullopt);

// Runs the epoch loop. With `out_dir` set, writes `train.log`,
// `best.ckpt/` (highest eval SSIM) and `last.ckpt/`; `run_config` is stored
// in each checkpoint. An empty eval set evaluates on the training set.
// Throws NumericError on a non-finite loss, keeping earlier checkpoints.
TrainResult train(const TrainSetup& setup, ParamStore& params,
                  const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& eval_set,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const Config* run_config = nullptr, std::ostream* echo = nullptr);

// ---- evaluation and checkpoints ------------------------------------------

std::vector<metrics::SampleScore> evaluate(const ModelConfig& model, const ParamStore& params,
                                           const std::vector<data::Sample>& samples,
                                           const metrics::SsimConfig& ssim,
                                           std::size_t workers = 1);

// Scores precomputed predictions against the targets of `truth`, pairwise.
std::vector<metrics::SampleScore> score_predictions(const std::vector<Tensor>& predictions,
                                                    const std::vector<data::Sample>& truth,
                                                    const metrics::SsimConfig& ssim);

void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const Config& run_config, const std::string& state);

struct Checkpoint {
  Config config;
  ModelConfig model;
  ParamStore params;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace s2v::train
