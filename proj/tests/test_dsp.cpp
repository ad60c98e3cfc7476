#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "s2v/dataset.hpp"
#include "s2v/dsp.hpp"
#include "s2v/errors.hpp"
#include "s2v/geometry.hpp"
#include "s2v/s2vt.hpp"
#include "support/gradcheck.hpp"
#include "support/naive.hpp"

using namespace s2v;
using s2v::testing::random_tensor;
using s2v::testing::naive::naive_dft_frame;

namespace {

dsp::EegRecording recording(std::size_t channels, std::size_t length, double fs,
                            std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return {random_tensor({channels, length}, rng), fs, "s01"};
}

// Direct 3-D DCT truncation: coefficients by triple sums, inverse by triple
// sums, orthonormal on both sides with the sqrt(m/n) per-axis rescale.
double dct_basis(std::size_t n, std::size_t k, std::size_t i) {
  const double a = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  return a * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
}

}  // namespace

TEST_CASE("segment_windows") {
  auto rec = recording(2, 1000, 250);
  auto w = dsp::segment_windows(rec, 2.16);
  REQUIRE(w.size() == 1);
  CHECK(w[0].shape() == Shape{2, 540});
  CHECK(w[0][0] == rec.samples[0]);
  CHECK(w[0][540] == rec.samples[1000]);

  CHECK(dsp::segment_windows(recording(1, 540, 250), 2.16).size() == 1);
  CHECK(dsp::window_length(250, 2.16) == 540);
  CHECK_THROWS_AS(dsp::segment_windows(recording(1, 539, 250), 2.16), DataError);

  auto many = dsp::segment_windows(recording(3, 2000, 1000), 0.5);
  CHECK(many.size() == 4);
  for (const auto& t : many) CHECK(t.shape() == Shape{3, 500});
}

TEST_CASE("lag_aligned_window") {
  auto rec = recording(2, 250 * 40, 250);
  auto w = dsp::lag_aligned_window(rec, 30.0);
  CHECK(w.shape() == Shape{2, 5000});
  CHECK(w[0] == rec.samples[1000]);
  CHECK(w[4999] == rec.samples[5999]);

  auto edge = dsp::lag_aligned_window(rec, 26.0);
  CHECK(edge.shape() == Shape{2, 5000});
  CHECK(edge[0] == rec.samples[0]);

  try {
    dsp::lag_aligned_window(rec, 25.0, 20.0, 6.0, 7);
    FAIL("expected an alignment error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("BOLD volume 7") != std::string::npos);
  }
}

TEST_CASE("stft: bin-centred sinusoid peaks at its bin") {
  const double fs = 256;
  const std::size_t frame = 64, n = 1024;
  for (std::size_t k : {3u, 10u, 20u}) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
      x[i] = std::sin(2 * std::numbers::pi * (k * fs / frame) * i / fs);
    auto spec = dsp::stft(x, fs, frame, 32);
    const std::size_t bins = frame / 2 + 1;
    CHECK(spec.shape() == Shape{(n - frame) / 32 + 1, bins});
    for (std::size_t t = 0; t < spec.shape()[0]; ++t) {
      std::size_t best = 0;
      for (std::size_t b = 1; b < bins; ++b)
        if (spec[t * bins + b] > spec[t * bins + best]) best = b;
      CHECK(best == k);
      // Oracle agrees on the peak.
      const auto ref = naive_dft_frame(x.data() + t * 32, frame);
      CHECK(std::max_element(ref.begin(), ref.end()) - ref.begin() == static_cast<long>(k));
    }
  }
}

TEST_CASE("stft: constant input puts all energy in bin 0") {
  std::vector<double> x(300, 2.5);
  auto spec = dsp::stft(x, 100, 50, 25);
  const std::size_t bins = 26;
  for (std::size_t t = 0; t < spec.shape()[0]; ++t) {
    CHECK(spec[t * bins] > 1.0);
    // Hann window leaks the DC term into bin 1 only; everything above is zero.
    for (std::size_t b = 2; b < bins; ++b) CHECK(spec[t * bins + b] < 1e-10);
    CHECK(spec[t * bins] > spec[t * bins + 1]);
  }
}

TEST_CASE("stft matches the brute-force DFT for frames up to 256") {
  std::mt19937_64 rng(77);
  auto sig = random_tensor({540}, rng);
  {
    auto spec = dsp::stft(sig.data(), 250, 64, 32);
    CHECK(spec.shape() == Shape{15, 33});
    for (std::size_t t = 0; t < 15; ++t) {
      const auto ref = naive_dft_frame(sig.data().data() + t * 32, 64);
      for (std::size_t b = 0; b < 33; ++b) CHECK(std::abs(ref[b] - spec[t * 33 + b]) <= 1e-8);
    }
  }
  for (std::size_t frame : {2u, 7u, 50u, 128u, 200u, 255u, 256u}) {
    const std::size_t hop = std::max<std::size_t>(1, frame / 3);
    auto spec = dsp::stft(sig.data(), 1000, frame, hop);
    const std::size_t bins = frame / 2 + 1;
    double worst = 0;
    for (std::size_t t = 0; t < spec.shape()[0]; ++t) {
      const auto ref = naive_dft_frame(sig.data().data() + t * hop, frame);
      for (std::size_t b = 0; b < bins; ++b)
        worst = std::max(worst, std::abs(ref[b] - spec[t * bins + b]));
    }
    INFO("frame " << frame);
    CHECK(worst <= 1e-8);
  }
  CHECK_THROWS_AS(dsp::stft(sig.data(), 250, 541, 1), DimensionError);
}

TEST_CASE("band_limit") {
  CHECK(dsp::retained_bins(250, 50) == 25);  // cutoff above Nyquist: only DC dropped
  CHECK(dsp::retained_bins(1000, 100) == 25);
  CHECK(dsp::retained_bins(5000, 500, 250) == 25);
  CHECK(dsp::retained_bins(5000, 1000, 250) == 50);

  std::mt19937_64 rng(3);
  auto spec = random_tensor({4, 51}, rng, 0, 1);
  auto lim = dsp::band_limit(spec, 1000, 100);
  CHECK(lim.shape() == Shape{4, 25});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t f = 0; f < 25; ++f) CHECK(lim[t * 25 + f] == spec[t * 51 + f + 1]);

  // Bin 0 never survives, for any (fs, frame, cutoff).
  for (double fs : {100.0, 250.0, 1000.0, 5000.0})
    for (std::size_t frame : {8u, 50u, 64u, 200u})
      for (double cut : {10.0, 250.0, 1e4}) {
        if (dsp::retained_bins(fs, frame, cut) == 0) continue;
        auto s = random_tensor({2, frame / 2 + 1}, rng, 0, 1);
        auto b = dsp::band_limit(s, fs, frame, cut);
        CHECK(b[0] == s[1]);
      }
}

TEST_CASE("minmax_normalize") {
  auto a = dsp::minmax_normalize(Tensor({3}, {2, 4, 6}));
  CHECK(a[0] == 0.0);
  CHECK(a[1] == 0.5);
  CHECK(a[2] == 1.0);
  auto c = dsp::minmax_normalize(Tensor({3}, {5, 5, 5}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(c[i] == 0.0);

  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = random_tensor({3, 7}, rng, -50, 80);
    auto n = dsp::minmax_normalize(t);
    CHECK(*std::min_element(n.data().begin(), n.data().end()) == 0.0);
    CHECK(*std::max_element(n.data().begin(), n.data().end()) == 1.0);
    auto twice = dsp::minmax_normalize(n);
    for (std::size_t i = 0; i < n.size(); ++i) CHECK(twice[i] == n[i]);
  }
}

TEST_CASE("dct_downsample") {
  auto c = dsp::dct_downsample(Tensor::full({6, 5, 7}, 0.3), {3, 2, 4});
  CHECK(c.shape() == Shape{3, 2, 4});
  for (double v : c.data()) CHECK(v == 0.3);

  std::mt19937_64 rng(2);
  auto v = random_tensor({5, 6, 7}, rng);
  auto same = dsp::dct_downsample(v, {5, 6, 7});
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(same[i] - v[i]) <= 1e-10);

  CHECK_THROWS_AS(dsp::dct_downsample(v, {6, 6, 7}), DimensionError);

  // Brute-force truncation oracle on a small volume.
  const std::array<std::size_t, 3> src{4, 5, 6}, dst{2, 3, 4};
  auto x = random_tensor({4, 5, 6}, rng);
  auto y = dsp::dct_downsample(x, dst);
  double worst = 0;
  for (std::size_t a = 0; a < dst[0]; ++a)
    for (std::size_t b = 0; b < dst[1]; ++b)
      for (std::size_t cc = 0; cc < dst[2]; ++cc) {
        double out = 0;
        for (std::size_t p = 0; p < dst[0]; ++p)
          for (std::size_t q = 0; q < dst[1]; ++q)
            for (std::size_t r = 0; r < dst[2]; ++r) {
              double coef = 0;
              for (std::size_t i = 0; i < src[0]; ++i)
                for (std::size_t j = 0; j < src[1]; ++j)
                  for (std::size_t k = 0; k < src[2]; ++k)
                    coef += x[(i * src[1] + j) * src[2] + k] * dct_basis(src[0], p, i) *
                            dct_basis(src[1], q, j) * dct_basis(src[2], r, k);
              const double rescale = std::sqrt(double(dst[0]) / src[0] * dst[1] / src[1] * dst[2] / src[2]);
              out += rescale * coef * dct_basis(dst[0], p, a) * dct_basis(dst[1], q, b) *
                     dct_basis(dst[2], r, cc);
            }
        worst = std::max(worst, std::abs(out - y[(a * dst[1] + b) * dst[2] + cc]));
      }
  CHECK(worst <= 1e-12);
}

TEST_CASE("CN-EPFL DCT path maps 54x108x108 to 30x64x64") {
  std::mt19937_64 rng(54);
  auto vol = random_tensor({54, 108, 108}, rng, 0, 1);
  auto out = dsp::dct_downsample(vol, {30, 64, 64});
  CHECK(out.shape() == Shape{30, 64, 64});
}

TEST_CASE("preset geometries") {
  const auto noddi = preset_geometry(noddi_preset());
  CHECK(noddi.channels == 64);
  CHECK(noddi.time == 20);
  CHECK(noddi.freq == 25);
  CHECK(noddi.depth == 30);
  CHECK(noddi_preset().declared_pairs == 4110);
  CHECK(noddi_preset().subjects == 15);
  CHECK(oddball_preset().volumes_per_subject == 1020u);
  CHECK(oddball_preset().declared_pairs == 17 * 1020);
  const auto odd = preset_geometry(oddball_preset());
  CHECK(odd.depth == 32);
  CHECK(odd.channels == 43);
  const auto cn = preset_geometry(cnepfl_preset());
  CHECK(cn.depth == 30);
  CHECK(cnepfl_preset().raw_volume == std::array<std::size_t, 3>{54, 108, 108});
  CHECK(default_frame_length(250) == 50);
  CHECK(default_frame_length(5000) == 1000);
  CHECK_THROWS_AS(preset_by_name("nope"), ConfigError);
}

TEST_CASE("build_pairs") {
  const double fs = 100, tr = 2.0;
  const std::size_t volumes = 100;
  auto rec = recording(3, static_cast<std::size_t>(fs * tr * volumes), fs, 9);
  std::mt19937_64 rng(4);
  auto bold = random_tensor({volumes, 4, 6, 6}, rng, -10, 40);

  dsp::PairingConfig lag;
  lag.mode = dsp::PairingMode::kLagAligned;
  dsp::PairingReport rep;
  auto pairs = dsp::build_pairs(rec, bold, tr, lag, &rep);
  // Volume v is stamped at (v+1) * TR; it needs a stamp of at least 26 s.
  std::size_t failing = 0;
  for (std::size_t v = 0; v < volumes; ++v) failing += (v + 1) * tr < 26.0 ? 1 : 0;
  CHECK(failing == 12);
  CHECK(pairs.size() == volumes - failing);
  CHECK(rep.skipped_early == failing);
  for (const auto& p : pairs) {
    CHECK(p.input.window_end_offset_s == 6.0);
    for (double v : p.input.data.data()) CHECK((v >= 0.0 && v <= 1.0));
    for (double v : p.target.data.data()) CHECK((v >= 0.0 && v <= 1.0));
  }

  dsp::PairingConfig trw;
  auto tr_pairs = dsp::build_pairs(rec, bold, tr, trw, &rep);
  CHECK(tr_pairs.size() == dsp::segment_windows(rec, tr).size());
  CHECK(tr_pairs.front().input.data.shape()[0] == 3);
  CHECK(tr_pairs.front().target.data.shape() == Shape{4, 6, 6});
  const auto f = dsp::retained_bins(fs, default_frame_length(fs));
  CHECK(tr_pairs.front().input.data.shape()[2] == f);

  trw.volume_target = std::array<std::size_t, 3>{2, 3, 3};
  auto small = dsp::build_pairs(rec, bold, tr, trw);
  CHECK(small.front().target.data.shape() == Shape{2, 3, 3});

  auto short_rec = recording(3, 100, fs);
  CHECK_THROWS_AS(dsp::build_pairs(short_rec, bold, tr, lag), DataError);
}

TEST_CASE("manifest parse and format") {
  const std::string text =
      "# synthetic\n"
      "name = demo\n"
      "fs = 250\n"
      "tr = 2.16\n"
      "geometry = 4 5 6 3 8 8\n"
      "subject a: a/x0.s2vt a/y0.s2vt\n"
      "subject a: a/x1.s2vt a/y1.s2vt\n"
      "subject b: b/x0.s2vt b/y0.s2vt\n";
  auto m = data::parse_manifest(text, "/data");
  CHECK(m.name == "demo");
  CHECK(m.fs_hz == 250);
  CHECK(m.tr_s == 2.16);
  CHECK(m.geometry == Geometry{4, 5, 6, 3, 8, 8});
  CHECK(m.pair_count() == 3);
  CHECK(m.subject_ids() == std::vector<std::string>{"a", "b"});
  CHECK(m.resolve("a/x0.s2vt") == std::filesystem::path("/data/a/x0.s2vt"));
  auto again = data::parse_manifest(data::format_manifest(m), "/data");
  CHECK(data::format_manifest(again) == data::format_manifest(m));

  CHECK_THROWS_AS(data::parse_manifest("name = x\nfs = 1\n", "."), DataError);
  CHECK_THROWS_AS(data::parse_manifest("fs = 1\ntr = 1\ngeometry = 1 2\n", "."), DataError);
  CHECK_THROWS_AS(data::parse_manifest("fs = 1\ntr = 1\nbogus = 3\n", "."), DataError);
  auto missing = data::parse_manifest(text, "/nonexistent");
  CHECK_THROWS_AS(data::validate_manifest(missing), DataError);
}
