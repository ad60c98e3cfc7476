#pragma once

// One finite-difference case per differentiable operation, each reduced to a
// scalar through a fixed random projection. Shared by the unit tests and the
// acceptance suite.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "s2v/metrics.hpp"
#include "s2v/ops.hpp"
#include "support/gradcheck.hpp"

namespace s2v::testing {

struct OpCase {
  std::string name;
  std::function<Tensor()> f;
  std::vector<Tensor> leaves;
};

class OpSuite {
 public:
  explicit OpSuite(std::uint64_t seed) : rng_(100 + seed) {
    auto r = [&](const Shape& s, double lo = -1.0, double hi = 1.0) {
      return random_tensor(s, rng_, lo, hi);
    };
    a = r({2, 3, 4});
    b = r({2, 3, 4});
    pos = r({2, 3, 4}, 0.5, 2.0);
    w = r({2, 3, 4});
    m1 = r({2, 3, 5});
    m2 = r({2, 5, 4});
    lw = r({3, 4});
    lb = r({3});
    cx = r({2, 2, 5, 6});
    ck = r({3, 2, 3, 2});
    cb = r({3});
    gain = r({3});
    shift = r({3});
    cw = r({2, 3, 5, 4});
    pw = r({2, 5, 6});
    bw = r({2, 2, 4, 5});
    lin_w = r({2, 3, 3});
    u = r({3, 9});
    delta = r({3, 9}, 0.05, 1.0);
    a_log = r({3, 4});
    sb = r({4, 9});
    sc = r({4, 9});
    sd = r({3});
    sw = r({3, 9});
    vx = r({3, 7, 7}, 0.0, 1.0);
    vy = r({3, 7, 7}, 0.0, 1.0);
    build();
  }
  OpSuite(const OpSuite&) = delete;
  OpSuite& operator=(const OpSuite&) = delete;

  const std::vector<OpCase>& cases() const { return cases_; }

 private:
  Tensor proj(const Tensor& t) const { return ops::sum(ops::mul(t, w)); }

  void build() {
    using namespace ops;
    metrics::SsimConfig sliding{5, 1e-4, 9e-4, metrics::SsimMode::kSlidingMean};
    metrics::SsimConfig global{5, 1e-4, 9e-4, metrics::SsimMode::kGlobal};
    metrics::SsimConfig cube{3, 1e-4, 9e-4, metrics::SsimMode::kSliding3d};
    cases_ = {
        {"add", [this] { return proj(add(a, b)); }, {a, b}},
        {"sub", [this] { return proj(sub(a, b)); }, {a, b}},
        {"mul", [this] { return proj(mul(a, b)); }, {a, b}},
        {"div", [this] { return proj(div(a, pos)); }, {a, pos}},
        {"scale", [this] { return proj(scale(a, -1.7)); }, {a}},
        {"add_scalar", [this] { return proj(mul(add_scalar(a, 0.3), a)); }, {a}},
        {"exp", [this] { return proj(ops::exp(a)); }, {a}},
        {"sigmoid", [this] { return proj(sigmoid(a)); }, {a}},
        {"silu", [this] { return proj(silu(a)); }, {a}},
        {"softplus", [this] { return proj(softplus(a)); }, {a}},
        {"mean", [this] { return mean(mul(a, a)); }, {a}},
        {"reshape", [this] { return proj(reshape(mul(a, a), {2, 3, 4})); }, {a}},
        {"permute", [this] { return sum(mul(permute(a, {2, 0, 1}), permute(w, {2, 0, 1}))); }, {a}},
        {"concat", [this] { return sum(mul(concat({a, b}, 1), concat({w, w}, 1))); }, {a, b}},
        {"slice", [this] { return sum(mul(slice(a, 2, 1, 3), slice(w, 2, 0, 3))); }, {a}},
        {"pad", [this] { return sum(mul(pad(a, {{0, 0}, {1, 1}, {2, 0}}), pw)); }, {a}},
        {"take_last", [this] { return sum(mul(take_last(a, {3, 0, 0, 2}), w)); }, {a}},
        {"matmul", [this] { return sum(mul(matmul(m1, m2), w)); }, {m1, m2}},
        {"linear", [this] { return sum(mul(linear(a, lw, lb), lin_w)); }, {a, lw, lb}},
        {"conv2d", [this] { return sum(mul(conv2d(cx, ck, cb, {1, 2, 1, 1}), cw)); }, {cx, ck, cb}},
        {"add_bias", [this] { return proj(mul(add_bias(a, lb, 1), a)); }, {a, lb}},
        {"layer_norm", [this] { return sum(mul(layer_norm(a, gain, shift, 1e-5, 1), w)); }, {a, gain, shift}},
        {"softmax", [this] { return proj(softmax(a, 2)); }, {a}},
        {"box_mean", [this] { return sum(mul(box_mean(cx, 2, 2), bw)); }, {cx}},
        {"dropout", [this] { return proj(dropout(a, 0.25, 77)); }, {a}},
        {"selective_scan/sequential",
         [this] { return sum(mul(selective_scan(u, delta, a_log, sb, sc, sd, ScanVariant::kSequential, 4), sw)); },
         {u, delta, a_log, sb, sc, sd}},
        {"selective_scan/chunked",
         [this] { return sum(mul(selective_scan(u, delta, a_log, sb, sc, sd, ScanVariant::kChunked, 4), sw)); },
         {u, delta, a_log, sb, sc, sd}},
        {"mse", [this] { return metrics::mse(vx, vy); }, {vx, vy}},
        {"ssim/sliding", [this, sliding] { return metrics::ssim(vx, vy, sliding); }, {vx, vy}},
        {"ssim/global", [this, global] { return metrics::ssim(vx, vy, global); }, {vx, vy}},
        {"ssim/sliding3d", [this, cube] { return metrics::ssim(vx, vy, cube); }, {vx, vy}},
        {"hybrid_loss", [this, sliding] { return metrics::hybrid_loss(vx, vy, {0.5, 0.5}, sliding); }, {vx, vy}},
    };
  }

  std::mt19937_64 rng_;
  Tensor a, b, pos, w, m1, m2, lw, lb, cx, ck, cb, gain, shift, cw, pw, bw, lin_w;
  Tensor u, delta, a_log, sb, sc, sd, sw, vx, vy;
  std::vector<OpCase> cases_;
};

}  // namespace s2v::testing
