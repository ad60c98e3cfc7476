#include "s2v/config.hpp"

#include <fstream>
#include <sstream>

#include "s2v/errors.hpp"
#include "s2v/strings.hpp"

namespace s2v {

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"run.seed", "0", "int", "master seed for initialization, shuffling and dropout"},
      {"run.workers", "1", "int", "OpenMP workers for per-sample gradients within a batch"},
      {"data.manifest", "", "text", "paired dataset manifest"},
      {"data.geometry", "", "text", "C T F D H W; empty = taken from the manifest"},
      {"model.embed", "32", "int", "encoder embedding width N"},
      {"model.heads", "4", "int", "attention heads; must divide model.embed"},
      {"model.stages", "2", "int", "encoder stages (each halves F)"},
      {"model.attention_dropout", "0", "real", "dropout on attention weights during training"},
      {"model.vss_blocks", "2", "int", "VSS blocks per U-Net stage"},
      {"model.state", "8", "int", "S6 state size S"},
      {"model.vss_expand", "2", "int", "VSS inner width = expand x stage width"},
      {"model.scan", "chunked", "chunked|sequential", "selective-scan kernel"},
      {"model.scan_chunk", "64", "int", "chunk length of the chunked scan"},
      {"loss.lambda1", "0.5", "real", "weight of 1 - SSIM"},
      {"loss.lambda2", "0.5", "real", "weight of MSE"},
      {"ssim.window", "7", "int", "SSIM window extent (odd)"},
      {"ssim.c1", "0.0001", "real", "SSIM luminance constant"},
      {"ssim.c2", "0.0009", "real", "SSIM contrast constant"},
      {"ssim.mode", "sliding", "sliding|global|sliding3d", "SSIM aggregation"},
      {"optim.lr", "0.001", "real", "base learning rate"},
      {"optim.weight_decay", "0.01", "real", "decoupled weight decay"},
      {"optim.beta1", "0.9", "real", "AdamW first-moment decay"},
      {"optim.beta2", "0.999", "real", "AdamW second-moment decay"},
      {"optim.eps", "1e-08", "real", "AdamW denominator epsilon"},
      {"optim.grad_clip", "0", "real", "global gradient-norm clip; 0 = off"},
      {"schedule.restart_period", "10", "int", "cosine restart period in epochs"},
      {"schedule.min_lr", "0", "real", "cosine floor"},
      {"train.epochs", "50", "int", "training epochs"},
      {"train.batch_size", "16", "int", "samples per optimizer step"},
      {"split.mode", "fixed", "fixed|loso|none", "subject split; none = evaluate on the training set"},
      {"split.train_subjects", "16", "int", "fixed split: training subjects"},
      {"split.test_subjects", "4", "int", "fixed split: test subjects"},
      {"split.fold", "0", "int", "loso: index of the held-out subject (sorted ids)"},
      {"eval.checkpoint", "best", "best|last", "checkpoint used by eval and predict"},
      {"dsp.pairing", "tr", "tr|lag", "fs x TR windows or lag-aligned windows"},
      {"dsp.frame", "0", "int", "STFT frame length; 0 = fs/5 rounded to even"},
      {"dsp.hop", "0", "int", "STFT hop; 0 = frame/2"},
      {"dsp.cutoff_hz", "250", "real", "highest retained frequency"},
      {"dsp.span_s", "20", "real", "lag pairing: window length in seconds"},
      {"dsp.lag_s", "6", "real", "lag pairing: gap between window end and volume"},
      {"dsp.volume_target", "", "text", "D H W for DCT down-sampling; empty = keep"},
      {"synth.kind", "paired", "paired|raw", "synthesize spectrogram pairs or raw sessions"},
      {"synth.geometry", "4 8 32 3 8 8", "text", "paired: C T F D H W"},
      {"synth.subjects", "4", "int", "number of synthetic subjects"},
      {"synth.pairs_per_subject", "8", "int", "paired: pairs per subject"},
      {"synth.noise", "0.01", "real", "noise added before normalization"},
      {"synth.channels", "4", "int", "raw: EEG channels"},
      {"synth.fs", "250", "real", "raw: EEG sampling rate"},
      {"synth.tr", "2", "real", "raw: fMRI repetition time"},
      {"synth.volumes", "16", "int", "raw: BOLD volumes per subject"},
      {"synth.volume", "4 8 8", "text", "raw: D H W of the BOLD volumes"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_schema()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void check_value(const ConfigKey& k, const std::string& v) {
  if (k.kind == "int") {
    strings::parse_int(v);
  } else if (k.kind == "real") {
    strings::parse_double(v);
  } else if (k.kind == "bool") {
    if (v != "true" && v != "false") throw ConfigError("expected true or false");
  } else if (k.kind != "text") {
    std::istringstream options(k.kind);
    std::string opt;
    while (std::getline(options, opt, '|')) {
      if (opt == v) return;
    }
    throw ConfigError("expected one of " + k.kind);
  }
}

}  // namespace

std::string valid_keys_message() {
  std::string s = "valid keys:";
  for (const auto& k : config_schema()) s += "\n  " + k.name + " (default '" + k.default_value + "')";
  return s;
}

Config::Config() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  const ConfigKey* k = find_key(key);
  if (k == nullptr) throw ConfigError("unknown config key '" + key + "'; " + valid_keys_message());
  try {
    check_value(*k, value);
  } catch (const ConfigError& e) {
    throw ConfigError("config key " + key + " = '" + value + "': " + e.what());
  }
  values_[key] = value;
}

void Config::set_assignment(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
  set(strings::trim(kv.substr(0, eq)), strings::trim(kv.substr(eq + 1)));
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strings::trim(strings::strip_comment(line));
    if (line.empty()) continue;
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  merge_text(ss.str(), path.string());
}

const std::string& Config::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long long Config::integer(const std::string& key) const { return strings::parse_int(text(key)); }

std::size_t Config::size(const std::string& key) const {
  const long long v = integer(key);
  if (v < 0) throw ConfigError("config key " + key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

double Config::real(const std::string& key) const { return strings::parse_double(text(key)); }

bool Config::flag(const std::string& key) const { return text(key) == "true"; }

std::string Config::format() const {
  std::ostringstream os;
  for (const auto& k : config_schema()) os << k.name << " = " << values_.at(k.name) << '\n';
  return os.str();
}

ModelConfig Config::model(const Geometry& g) const {
  ModelConfig m;
  m.geometry = g;
  m.embed = size("model.embed");
  m.heads = size("model.heads");
  m.stages = size("model.stages");
  m.attention_dropout = real("model.attention_dropout");
  m.vss_blocks = size("model.vss_blocks");
  m.state = size("model.state");
  m.vss_expand = size("model.vss_expand");
  m.scan = text("model.scan") == "sequential" ? ops::ScanVariant::kSequential
                                              : ops::ScanVariant::kChunked;
  m.chunk = size("model.scan_chunk");
  m.validate();
  return m;
}

metrics::SsimConfig Config::ssim() const {
  metrics::SsimConfig s;
  s.window = size("ssim.window");
  s.c1 = real("ssim.c1");
  s.c2 = real("ssim.c2");
  s.mode = metrics::parse_ssim_mode(text("ssim.mode"));
  s.validate();
  return s;
}

metrics::LossWeights Config::loss() const {
  metrics::LossWeights w{real("loss.lambda1"), real("loss.lambda2")};
  w.validate();
  return w;
}

std::string format_geometry(const Geometry& g) {
  std::ostringstream os;
  os << g.channels << ' ' << g.time << ' ' << g.freq << ' ' << g.depth << ' ' << g.height << ' '
     << g.width;
  return os.str();
}

Geometry parse_geometry(const std::string& s) {
  const auto v = strings::parse_sizes(s);
  if (v.size() != 6) throw ConfigError("geometry needs six extents C T F D H W, got '" + s + "'");
  for (auto e : v) {
    if (e == 0) throw ConfigError("geometry extents must be positive: '" + s + "'");
  }
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

}  // namespace s2v
