#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "s2v/errors.hpp"
#include "s2v/s2vt.hpp"
#include "s2v/train.hpp"

using namespace s2v;
using s2v::train::AdamW;
using s2v::train::Gradients;
using s2v::train::ScheduleConfig;
using s2v::train::SplitMode;
using s2v::train::SynthSpec;
using s2v::train::RawSynthSpec;
using s2v::train::TrainSetup;
using s2v::train::lr_at;
using s2v::train::make_splits;
using s2v::train::synth_pairs;
using s2v::train::synth_dataset;
using s2v::train::synth_raw_dataset;
using s2v::train::batch_gradients;
using s2v::train::evaluate;
using s2v::train::score_predictions;
using s2v::train::load_checkpoint;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("s2v_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TrainSetup tiny_setup(const Geometry& g) {
  TrainSetup s;
  s.model.geometry = g;
  s.model.embed = 4;
  s.model.heads = 2;
  s.model.vss_blocks = 1;
  s.model.state = 2;
  s.schedule = {1e-3, 2, 0.0, 3};
  s.batch_size = 3;
  s.ssim.window = 3;
  return s;
}

const Geometry kTiny{2, 4, 8, 2, 4, 4};

}  // namespace

TEST_CASE("adamw: zero gradients") {
  ParamStore p;
  p.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
  Gradients zero{{0, 0, 0}};
  AdamW plain(p, {0.0, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 5; ++i) plain.step(p, zero, 1e-3);
  CHECK(p.get("w")[0] == 1.0);
  CHECK(p.get("w")[1] == -2.0);

  AdamW decayed(p, {1e-2, 0.9, 0.999, 1e-8});
  decayed.step(p, zero, 1e-3);
  CHECK(std::abs(p.get("w")[0] - (1 - 1e-5)) <= 1e-15);
  CHECK(std::abs(p.get("w")[1] + 2 * (1 - 1e-5)) <= 1e-15);

  Gradients bad{{0, NAN, 0}};
  CHECK_THROWS_AS(decayed.step(p, bad, 1e-3), NumericError);
  CHECK(std::abs(p.get("w")[0] - (1 - 1e-5)) <= 1e-15);
}

TEST_CASE("adamw: scalar quadratic against the direct recurrence") {
  ParamStore p;
  p.add("w", Tensor({1}, {0.0}));
  AdamW opt(p, {1e-2, 0.9, 0.999, 1e-8});
  double w = 0, m = 0, v = 0;
  for (int t = 1; t <= 3000; ++t) {
    const double g = 2 * (p.get("w")[0] - 3);
    opt.step(p, {{g}}, 1e-2);
    const double gr = 2 * (w - 3);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    w -= 1e-2 * 1e-2 * w;
    w -= 1e-2 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    if (t == 500) {
      CHECK(std::abs(p.get("w")[0] - w) <= 1e-9);
      // The second-moment memory of the early large gradients slows the
      // approach: the recurrence itself sits near 2.769 here.
      CHECK(std::abs(w - 2.76933923078611) <= 1e-9);
    }
  }
  CHECK(std::abs(p.get("w")[0] - w) <= 1e-9);
  CHECK(std::abs(p.get("w")[0] - 3.0) < 1e-2);
}

TEST_CASE("lr_at") {
  ScheduleConfig cfg;
  for (std::size_t e : {0u, 10u, 20u, 30u, 40u}) CHECK(lr_at(e, 0.0, cfg) == 1e-3);
  for (std::size_t e : {5u, 15u, 25u, 35u, 45u}) CHECK(std::abs(lr_at(e, 0.0, cfg) - 5e-4) <= 1e-12);
  double prev = lr_at(0, 0.0, cfg);
  for (std::size_t e = 0; e < 50; ++e)
    for (double f : {0.0, 0.25, 0.5, 0.75}) {
      const double lr = lr_at(e, f, cfg);
      CHECK(lr >= 0.0);
      CHECK(lr <= 1e-3);
      if (e % 10 != 0 || f != 0.0) {
        CHECK(lr < prev);
        CHECK(prev - lr < 5e-5);  // no jumps inside a period
      }
      prev = lr;
    }
  CHECK_THROWS_AS(lr_at(50, 0.0, cfg), ConfigError);
  cfg.min_lr = 2e-3;
  CHECK_THROWS_AS(lr_at(0, 0.0, cfg), ConfigError);
}

TEST_CASE("make_splits") {
  std::vector<std::string> ids;
  for (int i = 15; i >= 1; --i) ids.push_back("sub" + std::to_string(100 + i));
  auto loso = make_splits(ids, SplitMode::kLoso);
  CHECK(loso.folds.size() == 15);
  std::set<std::string> held;
  for (const auto& f : loso.folds) {
    REQUIRE(f.test.size() == 1);
    CHECK(f.train.size() == 14);
    CHECK(std::find(f.train.begin(), f.train.end(), f.test[0]) == f.train.end());
    held.insert(f.test[0]);
  }
  CHECK(held.size() == 15);

  ids.clear();
  for (int i = 0; i < 20; ++i) ids.push_back("s" + std::to_string(i));
  auto fixed = make_splits(ids, SplitMode::kFixed, 16, 4, 3);
  REQUIRE(fixed.folds.size() == 1);
  CHECK(fixed.folds[0].train.size() == 16);
  CHECK(fixed.folds[0].test.size() == 4);
  std::set<std::string> all(fixed.folds[0].train.begin(), fixed.folds[0].train.end());
  all.insert(fixed.folds[0].test.begin(), fixed.folds[0].test.end());
  CHECK(all.size() == 20);
  std::vector<std::string> reversed(ids.rbegin(), ids.rend());
  CHECK(make_splits(reversed, SplitMode::kFixed, 16, 4, 3).folds[0].test == fixed.folds[0].test);

  CHECK_THROWS_AS(make_splits({"only"}, SplitMode::kLoso), ConfigError);
  CHECK_THROWS_AS(make_splits(ids, SplitMode::kFixed, 18, 4), ConfigError);
  CHECK(make_splits({"a", "b"}, SplitMode::kNone).folds[0].test.empty());
}

TEST_CASE("synth_dataset is deterministic and normalized") {
  SynthSpec spec;
  spec.geometry = kTiny;
  spec.subjects = 2;
  spec.pairs_per_subject = 3;
  spec.seed = 7;
  const auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  auto ma = synth_dataset(spec, a);
  synth_dataset(spec, b);
  CHECK(ma.pair_count() == 6);
  for (const auto& s : ma.subjects)
    for (const auto& f : s.files) {
      CHECK(slurp(a / f.first) == slurp(b / f.first));
      CHECK(slurp(a / f.second) == slurp(b / f.second));
    }
  CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
  auto reread = data::read_manifest(a / "manifest.txt");
  data::validate_manifest(reread);
  for (const auto& s : data::load_samples(reread, reread.subject_ids())) {
    for (double v : s.input.data()) CHECK((v >= 0.0 && v <= 1.0));
    for (double v : s.target.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("synthetic dependency is recoverable by ridge regression") {
  SynthSpec spec;
  spec.geometry = kTiny;
  spec.subjects = 12;
  spec.pairs_per_subject = 8;
  spec.seed = 11;
  const auto all = synth_pairs(spec);
  const std::size_t n_train = 64, n_test = all.size() - n_train;
  const std::size_t dx = all[0].input.size(), dy = all[0].target.size();
  Eigen::MatrixXd X(n_train, dx + 1), Y(n_train, dy);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < dx; ++j) X(i, j) = all[i].input[j];
    X(i, dx) = 1.0;
    for (std::size_t j = 0; j < dy; ++j) Y(i, j) = all[i].target[j];
  }
  const double alpha = 1e-1;
  Eigen::MatrixXd A = X.transpose() * X + alpha * Eigen::MatrixXd::Identity(dx + 1, dx + 1);
  Eigen::MatrixXd W = A.ldlt().solve(X.transpose() * Y);
  const Eigen::RowVectorXd mean = Y.colwise().mean();
  double ridge = 0, baseline = 0;
  for (std::size_t i = n_train; i < all.size(); ++i) {
    Eigen::RowVectorXd x(dx + 1), y(dy);
    for (std::size_t j = 0; j < dx; ++j) x(j) = all[i].input[j];
    x(dx) = 1.0;
    for (std::size_t j = 0; j < dy; ++j) y(j) = all[i].target[j];
    ridge += (x * W - y).squaredNorm();
    baseline += (mean - y).squaredNorm();
  }
  MESSAGE("ridge mse " << ridge / (n_test * dy) << " vs mean predictor " << baseline / (n_test * dy));
  CHECK(ridge < 0.5 * baseline);
}

TEST_CASE("synth_raw_dataset") {
  RawSynthSpec spec;
  spec.subjects = 2;
  spec.volumes = 5;
  const auto dir = scratch_dir("raw");
  auto m = synth_raw_dataset(spec, dir);
  CHECK(m.kind == data::ManifestKind::kRaw);
  data::validate_manifest(data::read_manifest(dir / "manifest.txt"));
  auto eeg = io::read_s2vt(dir / m.subjects[0].files[0].first);
  auto bold = io::read_s2vt(dir / m.subjects[0].files[0].second);
  CHECK(eeg.shape() == Shape{4, 2500});
  CHECK(bold.shape() == Shape{5, 4, 8, 8});
  fs::remove_all(dir);
}

TEST_CASE("batch gradients do not depend on the worker count") {
  SynthSpec spec;
  spec.geometry = kTiny;
  spec.subjects = 1;
  spec.pairs_per_subject = 5;
  const auto samples = synth_pairs(spec);
  auto setup = tiny_setup(kTiny);
  const auto params = init_model(setup.model, 3);
  std::vector<const data::Sample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  setup.workers = 1;
  const auto one = batch_gradients(setup, params, batch);
  setup.workers = 3;
  const auto three = batch_gradients(setup, params, batch);
  CHECK(one.loss == three.loss);
  CHECK(one.grads == three.grads);

  // The batch gradient is the mean of single-sample gradients.
  setup.workers = 1;
  std::vector<double> mean(one.grads[0].size(), 0.0);
  for (const auto* s : batch) {
    const auto g = batch_gradients(setup, params, {s});
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += g.grads[0][k] / 5.0;
  }
  for (std::size_t k = 0; k < mean.size(); ++k) CHECK(std::abs(mean[k] - one.grads[0][k]) <= 1e-14);
}

TEST_CASE("train: logs, checkpoints and replay") {
  SynthSpec spec;
  spec.geometry = kTiny;
  spec.subjects = 2;
  spec.pairs_per_subject = 4;
  const auto samples = synth_pairs(spec);
  std::vector<data::Sample> train_set(samples.begin(), samples.begin() + 4);
  std::vector<data::Sample> eval_set(samples.begin() + 4, samples.end());
  const auto setup = tiny_setup(kTiny);
  const auto a = scratch_dir("train_a"), b = scratch_dir("train_b");
  auto pa = init_model(setup.model, 5), pb = init_model(setup.model, 5);
  const auto ra = s2v::train::train(setup, pa, train_set, eval_set, a);
  s2v::train::train(setup, pb, train_set, eval_set, b);

  CHECK(ra.steps.size() == 3 * 2);
  CHECK(ra.epochs.size() == 3);
  CHECK(slurp(a / "train.log") == slurp(b / "train.log"));
  for (const char* ck : {"best.ckpt", "last.ckpt"}) {
    REQUIRE(fs::exists(a / ck / "index.txt"));
    for (const auto& e : fs::directory_iterator(a / ck)) {
      CHECK(slurp(e.path()) == slurp(b / ck / e.path().filename()));
    }
  }
  const auto log = slurp(a / "train.log");
  CHECK(log.find("# lambda1 = 0.5\n# lambda2 = 0.5\n") == 0);

  auto ck = load_checkpoint(a / "last.ckpt");
  CHECK(ck.model.geometry == kTiny);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::ranges::equal(ck.params.at(i).data(), pa.at(i).data()));

  // A poisoned restart aborts and leaves the earlier checkpoints readable.
  auto poisoned = pa.clone();
  poisoned.at(0).mutable_data()[0] = NAN;
  CHECK_THROWS_AS(s2v::train::train(setup, poisoned, train_set, eval_set, a), NumericError);
  CHECK_NOTHROW(load_checkpoint(a / "best.ckpt"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("evaluate") {
  SynthSpec spec;
  spec.geometry = kTiny;
  spec.subjects = 2;
  spec.pairs_per_subject = 2;
  const auto samples = synth_pairs(spec);
  const auto setup = tiny_setup(kTiny);
  const auto params = init_model(setup.model, 9);
  auto scores = evaluate(setup.model, params, samples, setup.ssim, 2);
  CHECK(scores.size() == 4);
  const auto serial = evaluate(setup.model, params, samples, setup.ssim, 1);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    CHECK(scores[i].ssim == serial[i].ssim);
    CHECK(scores[i].psnr == serial[i].psnr);
  }
  CHECK_THROWS_AS(evaluate(setup.model, params, {}, setup.ssim), DataError);
  auto other = setup.model;
  other.geometry.depth = 3;
  CHECK_THROWS_AS(evaluate(other, params, samples, setup.ssim), ConfigError);

  // Ground truth scored against itself.
  std::vector<Tensor> truth;
  for (const auto& s : samples) truth.push_back(s.target);
  const auto perfect = score_predictions(truth, samples, setup.ssim);
  for (const auto& s : perfect) {
    CHECK(s.ssim == 1.0);
    CHECK(std::isinf(s.psnr));
  }
}
