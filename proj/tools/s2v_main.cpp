// s2v: preprocess, synth-data, train, eval, predict and bench over the
// spectrogram-to-volume library.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "s2v/config.hpp"
#include "s2v/dataset.hpp"
#include "s2v/errors.hpp"
#include "s2v/geometry.hpp"
#include "s2v/kernels.hpp"
#include "s2v/pipeline.hpp"
#include "s2v/s2vt.hpp"
#include "s2v/strings.hpp"
#include "s2v/train.hpp"

namespace fs = std::filesystem;
using namespace s2v;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<long long> seed;
  std::optional<long long> workers;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config_path, "config file of key = value lines");
  cmd->add_option("--set", c.sets, "override one key, K=V (repeatable)");
  cmd->add_option("--seed", c.seed, "shorthand for --set run.seed=N");
  cmd->add_option("--workers", c.workers, "shorthand for --set run.workers=N");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

void apply_overrides(Config& cfg, const Common& c) {
  if (!c.config_path.empty()) cfg.merge_file(c.config_path);
  for (const auto& s : c.sets) cfg.set_assignment(s);
  if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
  if (c.workers) cfg.set("run.workers", std::to_string(*c.workers));
}

Config resolve_config(const Common& c) {
  Config cfg;
  apply_overrides(cfg, c);
  return cfg;
}

data::DatasetManifest open_manifest(const Config& cfg, const std::string& override_path) {
  const std::string path = override_path.empty() ? cfg.text("data.manifest") : override_path;
  if (path.empty()) throw ConfigError("no dataset: set data.manifest or pass --manifest");
  return data::read_manifest(path);
}

std::string schema_listing() {
  std::ostringstream os;
  os << "Config keys (defaults):\n";
  for (const auto& k : config_schema()) {
    os << "  " << std::left << std::setw(26) << k.name << " = " << std::setw(14)
       << (k.default_value.empty() ? "\"\"" : k.default_value) << "  " << k.help << " ["
       << k.kind << "]\n";
  }
  os << "\nExit codes: 0 ok, 2 config/geometry/usage, 3 data, 4 numeric.";
  return os.str();
}

// ---- subcommands -----------------------------------------------------------

int cmd_preprocess(const Common& c, const std::string& manifest_path) {
  const Config cfg = resolve_config(c);
  const auto raw = open_manifest(cfg, manifest_path);
  const auto rows = pipeline::preprocess_dataset(raw, pipeline::pairing_from_config(cfg), c.out);
  std::size_t total = 0;
  for (const auto& r : rows) {
    std::cout << "subject " << r.subject << ": " << r.pairs << " pairs (" << r.report.volumes
              << " volumes, " << r.report.windows << " windows, skipped "
              << r.report.skipped_early << " early / " << r.report.skipped_late << " late)\n";
    total += r.pairs;
  }
  const auto out = data::read_manifest(fs::path(c.out) / "manifest.txt");
  std::cout << "total: " << total << " pairs, geometry " << out.geometry.str() << "\n"
            << "manifest: " << (fs::path(c.out) / "manifest.txt").string() << "\n";
  return 0;
}

int cmd_synth(const Common& c) {
  const Config cfg = resolve_config(c);
  const auto seed = static_cast<std::uint64_t>(cfg.integer("run.seed"));
  data::DatasetManifest m;
  if (cfg.text("synth.kind") == "raw") {
    train::RawSynthSpec spec;
    spec.subjects = cfg.size("synth.subjects");
    spec.channels = cfg.size("synth.channels");
    spec.fs_hz = cfg.real("synth.fs");
    spec.tr_s = cfg.real("synth.tr");
    spec.volumes = cfg.size("synth.volumes");
    const auto v = strings::parse_sizes(cfg.text("synth.volume"));
    if (v.size() != 3) throw ConfigError("synth.volume needs three extents: D H W");
    spec.volume = {v[0], v[1], v[2]};
    spec.noise = cfg.real("synth.noise");
    spec.seed = seed;
    m = train::synth_raw_dataset(spec, c.out);
  } else {
    train::SynthSpec spec;
    spec.geometry = parse_geometry(cfg.text("synth.geometry"));
    spec.subjects = cfg.size("synth.subjects");
    spec.pairs_per_subject = cfg.size("synth.pairs_per_subject");
    spec.noise = cfg.real("synth.noise");
    spec.seed = seed;
    m = train::synth_dataset(spec, c.out);
  }
  std::cout << "wrote " << m.subjects.size() << " subjects, " << m.pair_count() << " "
            << (m.kind == data::ManifestKind::kRaw ? "sessions" : "pairs") << " to "
            << (fs::path(c.out) / "manifest.txt").string() << "\n";
  return 0;
}

// Train and test subject lists for the configured split.
train::Fold select_fold(const Config& cfg, const data::DatasetManifest& m) {
  const auto mode = train::parse_split_mode(cfg.text("split.mode"));
  const auto plan =
      train::make_splits(m.subject_ids(), mode, cfg.size("split.train_subjects"),
                         cfg.size("split.test_subjects"),
                         static_cast<std::uint64_t>(cfg.integer("run.seed")));
  const std::size_t fold = mode == train::SplitMode::kLoso ? cfg.size("split.fold") : 0;
  if (fold >= plan.folds.size()) {
    throw ConfigError("split.fold " + std::to_string(fold) + " out of range; " +
                      std::to_string(plan.folds.size()) + " folds");
  }
  return plan.folds[fold];
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " ") + x;
  return s;
}

int cmd_train(const Common& c, const std::string& manifest_path) {
  Config cfg = resolve_config(c);
  const auto m = open_manifest(cfg, manifest_path);
  const Geometry g = pipeline::resolve_geometry(cfg, m);
  cfg.set("data.geometry", format_geometry(g));
  if (!manifest_path.empty()) cfg.set("data.manifest", manifest_path);
  const auto setup = train::TrainSetup::from_config(cfg, g);
  setup.model.validate();
  const auto fold = select_fold(cfg, m);
  std::cout << "train subjects: " << join(fold.train) << "\n"
            << "test subjects: " << (fold.test.empty() ? "(none, evaluating on train)" : join(fold.test))
            << "\n";
  const auto train_set = data::load_samples(m, fold.train);
  const auto eval_set = data::load_samples(m, fold.test);
  auto params = init_model(setup.model, setup.seed);
  std::cout << "parameters: " << params.scalar_count() << "\n";
  const auto result = train::train(setup, params, train_set, eval_set, fs::path(c.out), &cfg,
                                   &std::cout);
  std::cout << "best epoch " << result.best_epoch << " ssim "
            << strings::format_double(result.best_ssim) << "\n"
            << "checkpoints: " << (fs::path(c.out) / "best.ckpt").string() << ", "
            << (fs::path(c.out) / "last.ckpt").string() << "\n";
  return 0;
}

struct CheckpointArgs {
  std::string run;
  std::string checkpoint;
};

void add_checkpoint_args(CLI::App* cmd, CheckpointArgs& a) {
  auto* run = cmd->add_option("--run", a.run, "training output directory");
  auto* ck = cmd->add_option("--checkpoint", a.checkpoint, "checkpoint directory");
  run->excludes(ck);
}

// The chosen checkpoint with the run's config, then --config/--set on top.
std::pair<train::Checkpoint, fs::path> open_checkpoint(const CheckpointArgs& a, const Common& c) {
  fs::path dir = a.checkpoint;
  if (dir.empty()) {
    if (a.run.empty()) throw UsageError("pass --run DIR or --checkpoint DIR");
    Config probe;
    probe.merge_file(fs::path(a.run) / "last.ckpt" / "config.txt");
    apply_overrides(probe, c);
    dir = fs::path(a.run) / (probe.text("eval.checkpoint") + ".ckpt");
  }
  auto ck = train::load_checkpoint(dir);
  apply_overrides(ck.config, c);
  return {std::move(ck), dir};
}

int write_report(const std::vector<metrics::SampleScore>& scores, const fs::path& out,
                 const std::string& label) {
  const auto rows = metrics::summarize(scores);
  fs::create_directories(out);
  std::ofstream(out / "report.csv") << format_report_csv(rows);
  std::ofstream(out / "report.txt") << "# " << label << "\n" << format_report_text(rows);
  std::cout << "# " << label << "\n" << format_report_text(rows)
            << "report: " << (out / "report.csv").string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const CheckpointArgs& a, const std::string& manifest_path,
             const std::string& predictions_path) {
  if (!predictions_path.empty()) {
    const Config cfg = resolve_config(c);
    const auto truth = open_manifest(cfg, manifest_path);
    const auto preds = data::read_manifest(predictions_path);
    std::vector<std::string> subjects = preds.subject_ids();
    const auto samples = data::load_samples(truth, subjects);
    std::vector<Tensor> predicted;
    for (const auto& id : subjects) {
      const auto& entry = preds.subject(id);
      if (entry.files.size() != truth.subject(id).files.size()) {
        throw DataError("subject '" + id + "': " + std::to_string(entry.files.size()) +
                        " predictions for " + std::to_string(truth.subject(id).files.size()) +
                        " targets");
      }
      for (const auto& f : entry.files) predicted.push_back(io::read_s2vt(preds.resolve(f.second)));
    }
    const auto scores = train::score_predictions(predicted, samples, cfg.ssim());
    const fs::path out = c.out.empty() ? fs::path(predictions_path).parent_path() : fs::path(c.out);
    return write_report(scores, out, "predictions: " + predictions_path);
  }
  auto [ck, dir] = open_checkpoint(a, c);
  const auto m = open_manifest(ck.config, manifest_path);
  pipeline::resolve_geometry(ck.config, m);
  const auto fold = select_fold(ck.config, m);
  const auto& subjects = fold.test.empty() ? fold.train : fold.test;
  const auto samples = data::load_samples(m, subjects);
  const auto scores = train::evaluate(ck.model, ck.params, samples, ck.config.ssim(),
                                      ck.config.size("run.workers"));
  const fs::path out = c.out.empty() ? dir.parent_path() : fs::path(c.out);
  return write_report(scores, out,
                      "checkpoint: " + dir.filename().string() + " (" + dir.string() + ")");
}

int cmd_predict(const Common& c, const CheckpointArgs& a, const std::string& manifest_path,
                const std::vector<std::string>& inputs, std::vector<std::string> subjects) {
  auto [ck, dir] = open_checkpoint(a, c);
  std::cout << "checkpoint: " << dir.string() << "\n";
  const auto workers = ck.config.size("run.workers");
  if (!inputs.empty()) {
    fs::create_directories(c.out);
    const auto& g = ck.model.geometry;
    for (const auto& in : inputs) {
      const Tensor x = io::read_s2vt(in);
      if (x.shape() != Shape{g.channels, g.time, g.freq}) {
        throw ConfigError(in + ": shape " + shape_str(x.shape()) +
                          " does not match checkpoint geometry " + g.str());
      }
      NoGradScope no_grad;
      const Tensor y = forward(ck.model, ck.params, x);
      const fs::path dst = fs::path(c.out) / fs::path(in).filename();
      io::write_s2vt(dst, y);
      std::cout << in << " -> " << dst.string() << " " << shape_str(y.shape()) << "\n";
    }
    return 0;
  }
  const auto m = open_manifest(ck.config, manifest_path);
  pipeline::resolve_geometry(ck.config, m);
  if (subjects.empty()) subjects = m.subject_ids();
  const auto out = pipeline::predict_dataset(ck.model, ck.params, m, subjects, c.out, workers);
  std::cout << "wrote " << out.pair_count() << " volumes of shape " << ck.model.geometry.depth
            << "x" << ck.model.geometry.height << "x" << ck.model.geometry.width << " to "
            << (fs::path(c.out) / "manifest.txt").string() << "\n";
  return 0;
}

// ---- bench -----------------------------------------------------------------

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_bench(const Common& c, bool quick) {
  const Config cfg = resolve_config(c);
  std::mt19937_64 rng(static_cast<std::uint64_t>(cfg.integer("run.seed")));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const std::size_t E = 16, S = cfg.size("model.state"), chunk = cfg.size("model.scan_chunk");
  std::ostringstream rows;
  rows << "kind,name,size,variant,seconds,throughput,checksum,max_abs_diff\n";

  std::printf("%-10s %6s %12s %14s %14s %18s %10s\n", "scan", "L", "variant", "seconds",
              "tokens/s", "checksum", "max|diff|");
  for (std::size_t L : {256u, 1024u, 4096u}) {
    const kernels::ScanDims dims{E, S, L};
    std::vector<double> u(E * L), delta(E * L), a(E * S), b(S * L), cc(S * L), d(E);
    for (auto& v : u) v = uni(rng) - 0.5;
    for (auto& v : delta) v = 1e-3 + 0.1 * uni(rng);
    for (auto& v : a) v = -(0.5 + 4 * uni(rng));
    for (auto& v : b) v = uni(rng) - 0.5;
    for (auto& v : cc) v = uni(rng) - 0.5;
    for (auto& v : d) v = 1.0;
    const kernels::ScanInputs in{u, delta, a, b, cc, d};
    std::vector<double> y_seq(E * L), y_chk(E * L);
    const int reps = quick ? 1 : 20;
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) kernels::par::selective_scan(dims, in, y_seq, {});
    const double t_seq = seconds_since(t0) / reps;
    t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) kernels::par::selective_scan_chunked(dims, in, y_chk, {}, chunk);
    const double t_chk = seconds_since(t0) / reps;
    double diff = 0, sum_seq = 0, sum_chk = 0;
    for (std::size_t i = 0; i < y_seq.size(); ++i) {
      diff = std::max(diff, std::abs(y_seq[i] - y_chk[i]));
      sum_seq += y_seq[i];
      sum_chk += y_chk[i];
    }
    char cs_seq[32], cs_chk[32];
    std::snprintf(cs_seq, sizeof(cs_seq), "%.9e", sum_seq);
    std::snprintf(cs_chk, sizeof(cs_chk), "%.9e", sum_chk);
    for (int v = 0; v < 2; ++v) {
      const char* name = v == 0 ? "sequential" : "chunked";
      const double t = v == 0 ? t_seq : t_chk;
      const char* cs = v == 0 ? cs_seq : cs_chk;
      const double tps = static_cast<double>(E * L) / t;
      std::printf("%-10s %6zu %12s %14.6f %14.4g %18s %10.2e\n", "s6", L, name, t, tps, cs, diff);
      rows << "scan,s6," << L << ',' << name << ',' << t << ',' << tps << ',' << cs << ','
           << diff << '\n';
    }
  }

  std::printf("\n%-10s %-22s %14s\n", "forward", "geometry", "seconds");
  for (const char* name : {"noddi", "oddball", "cnepfl"}) {
    const auto& preset = preset_by_name(name);
    const Geometry g = preset_geometry(preset);
    const ModelConfig mc = cfg.model(g);
    const auto params = init_model(mc, 0);
    Tensor x = Tensor::zeros({g.channels, g.time, g.freq});
    for (auto& v : x.mutable_data()) v = uni(rng);
    NoGradScope no_grad;
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor y = forward(mc, params, x);
    const double t = seconds_since(t0);
    std::printf("%-10s %-22s %14.4f  -> %s\n", name, g.str().c_str(), t,
                shape_str(y.shape()).c_str());
    rows << "forward," << name << ',' << g.channels << 'x' << g.time << 'x' << g.freq
         << ",model," << t << ',' << 1.0 / t << ",-,-\n";
  }
  std::cout << "\n" << rows.str();
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::ofstream(fs::path(c.out) / "bench.csv") << rows.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2v: EEG spectrogram to fMRI volume synthesis"};
  app.footer(schema_listing());
  app.require_subcommand(1);

  Common common;
  std::string manifest, predictions;
  std::vector<std::string> inputs, subjects;
  CheckpointArgs ckpt;
  bool quick = false;

  auto* pre = app.add_subcommand("preprocess", "raw EEG/BOLD sessions -> paired spectrogram dataset");
  add_common(pre, common, true);
  pre->add_option("--manifest", manifest, "raw manifest (default: data.manifest)");

  auto* synth = app.add_subcommand("synth-data", "write a synthetic dataset (synth.* keys)");
  add_common(synth, common, true);

  auto* tr = app.add_subcommand("train", "train on data.manifest; writes train.log and checkpoints");
  add_common(tr, common, true);
  tr->add_option("--manifest", manifest, "paired manifest (default: data.manifest)");

  auto* ev = app.add_subcommand("eval", "score a checkpoint or a predictions manifest");
  add_common(ev, common, false);
  add_checkpoint_args(ev, ckpt);
  ev->add_option("--manifest", manifest, "paired manifest with the targets");
  ev->add_option("--predictions", predictions, "paired manifest (input, prediction) to score");

  auto* pr = app.add_subcommand("predict", "one volume per input spectrogram");
  add_common(pr, common, true);
  add_checkpoint_args(pr, ckpt);
  pr->add_option("--manifest", manifest, "paired manifest whose inputs are predicted");
  pr->add_option("--input", inputs, "single S2VT spectrogram (repeatable)");
  pr->add_option("--subjects", subjects, "subjects to predict (default: all)")->delimiter(',');

  auto* bench = app.add_subcommand("bench", "scan throughput and forward latency");
  add_common(bench, common, false);
  bench->add_flag("--quick", quick, "single repetition per scan");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*pre) return cmd_preprocess(common, manifest);
    if (*synth) return cmd_synth(common);
    if (*tr) return cmd_train(common, manifest);
    if (*ev) return cmd_eval(common, ckpt, manifest, predictions);
    if (*pr) return cmd_predict(common, ckpt, manifest, inputs, subjects);
    if (*bench) return cmd_bench(common, quick);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
