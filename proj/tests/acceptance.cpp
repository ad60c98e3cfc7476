// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails. Usage: s2v_acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "s2v/decoder.hpp"
#include "s2v/dsp.hpp"
#include "s2v/geometry.hpp"
#include "s2v/metrics.hpp"
#include "s2v/model.hpp"
#include "s2v/ops.hpp"
#include "s2v/train.hpp"
#include "support/gradcheck.hpp"
#include "support/micro_model.hpp"
#include "support/naive.hpp"
#include "support/op_suite.hpp"

using namespace s2v;
namespace fs = std::filesystem;
using s2v::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---- 1. gradients -----------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double op_worst = 0, model_worst = 0;
  std::string op_name, model_name;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    s2v::testing::OpSuite suite(seed);
    for (const auto& c : suite.cases()) {
      const auto r = s2v::testing::grad_check(c.f, c.leaves);
      if (r.worst > op_worst) {
        op_worst = r.worst;
        op_name = c.name;
      }
    }
    const auto r = s2v::testing::micro_model_gradcheck(seed, 4);
    if (r.worst > model_worst) {
      model_worst = r.worst;
      model_name = r.worst_name;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = op_worst < 1e-4 && model_worst < 1e-4 && secs < 120;
  return {pass, "10 seeds; ops worst " + fmt("%.2e", op_worst) + " (" + op_name +
                    "), micro model worst " + fmt("%.2e", model_worst) + " (" + model_name +
                    "); " + fmt("%.1f s", secs)};
}

// ---- 2. scan oracles --------------------------------------------------------

Outcome scans() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(42);
  double worst = 0;
  const std::size_t E = 4, S = 4;
  for (std::size_t L : {1u, 2u, 63u, 64u, 65u, 257u, 1000u, 4096u}) {
    auto u = random_tensor({E, L}, rng);
    auto delta = random_tensor({E, L}, rng, 1e-3, 1.0);
    auto a_log = random_tensor({E, S}, rng);
    auto b = random_tensor({S, L}, rng);
    auto c = random_tensor({S, L}, rng);
    auto d = random_tensor({E}, rng);
    const auto oracle = s2v::testing::naive::s6(vec(u), vec(delta), vec(a_log), vec(b), vec(c),
                                                vec(d), E, S, L);
    for (std::size_t chunk : {1u, 7u, 64u, 256u}) {
      const auto y =
          ops::selective_scan(u, delta, a_log, b, c, d, ops::ScanVariant::kChunked, chunk);
      for (std::size_t i = 0; i < oracle.size(); ++i)
        worst = std::max(worst, std::abs(y[i] - oracle[i]));
    }
    const auto seq = ops::selective_scan(u, delta, a_log, b, c, d, ops::ScanVariant::kSequential);
    for (std::size_t i = 0; i < oracle.size(); ++i)
      worst = std::max(worst, std::abs(seq[i] - oracle[i]));
  }
  bool merge_exact = true;
  for (std::size_t h = 1; h <= 16; ++h)
    for (std::size_t w = 1; w <= 16; ++w) {
      auto x = random_tensor({2, h, w}, rng);
      const auto back = decoder::scan_merge(decoder::scan_expand(x), h, w);
      for (std::size_t i = 0; i < x.size(); ++i) merge_exact &= back[i] == 4.0 * x[i];
    }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 1e-10 && merge_exact && secs < 60,
          "blocked vs recurrence max |diff| " + fmt("%.2e", worst) + " over L<=4096; merge(expand) " +
              (merge_exact ? "== 4x for all H,W<=16" : "NOT exact") + "; " + fmt("%.1f s", secs)};
}

// ---- 3. DSP oracles ---------------------------------------------------------

Outcome dsp_oracles() {
  std::mt19937_64 rng(3);
  auto sig = random_tensor({1024}, rng);
  double stft_worst = 0;
  for (std::size_t frame : {2u, 7u, 64u, 100u, 128u, 255u, 256u}) {
    const std::size_t hop = std::max<std::size_t>(1, frame / 2);
    const auto spec = dsp::stft(sig.data(), 250, frame, hop);
    const std::size_t bins = frame / 2 + 1;
    for (std::size_t t = 0; t < spec.shape()[0]; ++t) {
      const auto ref = s2v::testing::naive::naive_dft_frame(sig.data().data() + t * hop, frame);
      for (std::size_t k = 0; k < bins; ++k)
        stft_worst = std::max(stft_worst, std::abs(ref[k] - spec[t * bins + k]));
    }
  }
  double round_trip = 0;
  for (const Shape& s : {Shape{5, 6, 7}, Shape{8, 8, 8}, Shape{3, 10, 4}}) {
    auto v = random_tensor(s, rng);
    const auto same = dsp::dct_downsample(v, {s[0], s[1], s[2]});
    for (std::size_t i = 0; i < v.size(); ++i) round_trip = std::max(round_trip, std::abs(same[i] - v[i]));
  }
  bool constants_exact = true;
  for (double c : {0.0, 0.3, 1.0, -2.5}) {
    const auto out = dsp::dct_downsample(Tensor::full({6, 5, 7}, c), {3, 2, 4});
    for (double v : out.data()) constants_exact &= v == c;
  }
  return {stft_worst <= 1e-8 && round_trip <= 1e-10 && constants_exact,
          "stft vs DFT " + fmt("%.2e", stft_worst) + " (frames<=256); dct round trip " +
              fmt("%.2e", round_trip) + "; constants " + (constants_exact ? "exact" : "NOT exact")};
}

// ---- 4. metric identities ---------------------------------------------------

Outcome metric_identities() {
  std::mt19937_64 rng(4);
  double self_worst = 0, sym_worst = 0;
  bool hybrid_exact = true;
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor({7, 9, 9}, rng, 0, 1);
    auto y = random_tensor({7, 9, 9}, rng, 0, 1);
    for (auto mode : {metrics::SsimMode::kSlidingMean, metrics::SsimMode::kGlobal,
                      metrics::SsimMode::kSliding3d}) {
      metrics::SsimConfig cfg;
      cfg.mode = mode;
      self_worst = std::max(self_worst, std::abs(metrics::ssim(x, x, cfg).item() - 1.0));
      sym_worst = std::max(sym_worst, std::abs(metrics::ssim(x, y, cfg).item() -
                                               metrics::ssim(y, x, cfg).item()));
      hybrid_exact &= metrics::hybrid_loss(x, y, {1, 0}, cfg).item() ==
                      1.0 - metrics::ssim(x, y, cfg).item();
      hybrid_exact &= metrics::hybrid_loss(x, y, {0, 1}, cfg).item() == metrics::mse(x, y).item();
      hybrid_exact &= metrics::hybrid_loss(x, x, {0.5, 0.5}, cfg).item() == 0.0;
    }
  }
  const double p = metrics::psnr_from_mse(0.01);
  return {self_worst <= 1e-9 && sym_worst <= 1e-12 && p == 20.0 && hybrid_exact,
          "|ssim(x,x)-1| " + fmt("%.1e", self_worst) + "; asymmetry " + fmt("%.1e", sym_worst) +
              "; psnr(0.01) = " + fmt("%.17g", p) + "; hybrid degenerate weights " +
              (hybrid_exact ? "exact" : "NOT exact")};
}

// ---- 5. geometry ------------------------------------------------------------

Outcome geometry() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(5);
  bool ok = true;
  std::string detail;
  const std::pair<const char*, Shape> expected[] = {
      {"noddi", {30, 64, 64}}, {"oddball", {32, 64, 64}}, {"cnepfl", {30, 64, 64}}};
  for (const auto& [name, shape] : expected) {
    const Geometry g = preset_geometry(preset_by_name(name));
    ModelConfig cfg;
    cfg.geometry = g;
    const auto params = init_model(cfg, 0);
    NoGradScope no_grad;
    const auto y = forward(cfg, params, random_tensor({g.channels, g.time, g.freq}, rng, 0, 1));
    ok &= y.shape() == shape;
    detail += std::string(name) + " " + shape_str({g.channels, g.time, g.freq}) + "->" +
              shape_str(y.shape()) + "; ";
  }
  const auto vol = random_tensor({54, 108, 108}, rng, 0, 1);
  const auto down = dsp::dct_downsample(vol, {30, 64, 64});
  ok &= down.shape() == Shape{30, 64, 64};
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail += "dct " + shape_str(vol.shape()) + "->" + shape_str(down.shape()) + "; " +
            fmt("%.1f s", secs);
  return {ok && secs < 30, detail};
}

// ---- 6. learnability --------------------------------------------------------

train::TrainSetup micro_train_setup(const Geometry& g) {
  train::TrainSetup s;
  s.model.geometry = g;
  s.model.embed = 8;
  s.model.heads = 2;
  s.model.vss_blocks = 1;
  s.model.state = 4;
  // 8 pairs at batch 8 give one step per epoch: 200 epochs = 200 steps, and
  // the 50-epoch cosine with 10-epoch restarts scales to 5 restarts of 40.
  s.schedule = {1e-3, 40, 0.0, 200};
  s.batch_size = 8;
  return s;
}

Outcome learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  train::SynthSpec spec;
  spec.subjects = 1;
  spec.pairs_per_subject = 8;
  spec.seed = 7;
  const auto samples = train::synth_pairs(spec);
  const auto setup = micro_train_setup(spec.geometry);
  auto params = init_model(setup.model, 1);
  const auto r = train::train(setup, params, samples, {});
  double windows[4] = {0, 0, 0, 0};
  for (const auto& s : r.steps) windows[(s.step - 1) / 50] += s.loss / 50;
  bool decreasing = r.steps.size() == 200;
  for (int i = 1; i < 4; ++i) decreasing &= windows[i] < windows[i - 1];
  const double final_ssim = r.epochs.back().eval_ssim;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream os;
  os << r.steps.size() << " steps; training ssim " << fmt("%.4f", final_ssim)
     << "; 50-step mean loss " << fmt("%.5f", windows[0]) << " > " << fmt("%.5f", windows[1])
     << " > " << fmt("%.5f", windows[2]) << " > " << fmt("%.5f", windows[3]) << "; "
     << fmt("%.1f s", secs);
  return {final_ssim > 0.90 && decreasing && secs < 600, os.str()};
}

// ---- 7. schedule and optimizer ----------------------------------------------

Outcome schedule_optimizer() {
  train::ScheduleConfig cfg;
  bool restarts = true;
  double mid_worst = 0;
  for (std::size_t e : {0u, 10u, 20u, 30u, 40u}) restarts &= train::lr_at(e, 0.0, cfg) == 1e-3;
  for (std::size_t e : {5u, 15u, 25u, 35u, 45u})
    mid_worst = std::max(mid_worst, std::abs(train::lr_at(e, 0.0, cfg) - 5e-4));

  ParamStore p;
  p.add("w", Tensor({1}, {0.0}));
  train::AdamW opt(p, {});
  for (int t = 0; t < 500; ++t) opt.step(p, {{2 * (p.get("w")[0] - 3)}}, 1e-2);
  const double gap = std::abs(p.get("w")[0] - 3.0);
  return {restarts && mid_worst <= 1e-12 && gap < 1e-2,
          std::string("restart values ") + (restarts ? "exact" : "NOT exact") +
              "; midpoint error " + fmt("%.1e", mid_worst) + "; quadratic after 500 steps |w-3| = " +
              fmt("%.4f", gap) + " (bound 1e-2)"};
}

// ---- 8. determinism ---------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism() {
  train::SynthSpec spec;
  spec.subjects = 2;
  spec.pairs_per_subject = 4;
  spec.seed = 8;
  const auto samples = train::synth_pairs(spec);
  const std::vector<data::Sample> train_set(samples.begin(), samples.begin() + 4);
  const std::vector<data::Sample> eval_set(samples.begin() + 4, samples.end());
  auto setup = micro_train_setup(spec.geometry);
  setup.schedule = {1e-3, 2, 0.0, 4};
  setup.batch_size = 3;
  setup.model.attention_dropout = 0.1;
  setup.seed = 11;
  const auto base = fs::temp_directory_path() / "s2v_acceptance_determinism";
  fs::remove_all(base);
  for (const char* run : {"a", "b"}) {
    auto params = init_model(setup.model, setup.seed);
    train::train(setup, params, train_set, eval_set, base / run);
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto twin = base / "b" / fs::relative(e.path(), base / "a");
    if (!fs::exists(twin) || slurp(e.path()) != slurp(twin)) ++differing;
  }
  fs::remove_all(base);
  return {files > 0 && differing == 0,
          std::to_string(files) + " files (train.log, best.ckpt, last.ckpt) compared, " +
              std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient suite", gradients},
      {"scan oracles", scans},
      {"dsp oracles", dsp_oracles},
      {"metric identities", metric_identities},
      {"geometry reproduction", geometry},
      {"learnability", learnability},
      {"schedule and optimizer", schedule_optimizer},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (int i = 0; i < 8; ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
