#include "s2v/decoder.hpp"

#include <cmath>

#include "s2v/errors.hpp"

namespace s2v::decoder {

namespace {

std::string stage_name(std::size_t s) { return "dec.stage" + std::to_string(s); }

// [C,H,W] -> [O,H,W] with weight [O,C] and bias [O].
Tensor pointwise(const ParamStore& p, const std::string& name, const Tensor& x) {
  const auto& w = p.get(name + ".weight");
  const auto& s = x.shape();
  auto flat = ops::matmul(w, ops::reshape(x, {s[0], s[1] * s[2]}));
  flat = ops::add_bias(flat, p.get(name + ".bias"), 0);
  return ops::reshape(flat, {w.shape()[0], s[1], s[2]});
}

void add_pointwise(ParamStore& p, const std::string& name, std::size_t out, std::size_t in,
                   std::mt19937_64& rng) {
  p.add_uniform(name + ".weight", {out, in}, in, rng);
  p.add_uniform(name + ".bias", {out}, in, rng);
}

void add_norm(ParamStore& p, const std::string& name, std::size_t n) {
  p.add_constant(name + ".gain", {n}, 1.0);
  p.add_constant(name + ".shift", {n}, 0.0);
}

Tensor channel_norm(const ParamStore& p, const std::string& name, const Tensor& x, double eps) {
  return ops::layer_norm(x, p.get(name + ".gain"), p.get(name + ".shift"), eps, 0);
}

// [C,H,W] -> [4C,H/2,W/2]: channel block k holds the (k/2, k%2) member of
// each 2x2 neighbourhood.
Tensor space_to_depth(const Tensor& x) {
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  auto r = ops::reshape(x, {c, h / 2, 2, w / 2, 2});
  r = ops::permute(r, {2, 4, 0, 1, 3});
  return ops::reshape(r, {4 * c, h / 2, w / 2});
}

// Inverse of space_to_depth: [4C,H,W] -> [C,2H,2W].
Tensor depth_to_space(const Tensor& x) {
  const std::size_t c = x.shape()[0] / 4, h = x.shape()[1], w = x.shape()[2];
  auto r = ops::reshape(x, {2, 2, c, h, w});
  r = ops::permute(r, {2, 3, 0, 4, 1});
  return ops::reshape(r, {c, 2 * h, 2 * w});
}

Tensor run_stage(const ParamStore& p, const std::string& name, Tensor x,
                 const DecoderConfig& cfg) {
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    x = vss_block(p, name + ".block" + std::to_string(b), x, cfg);
  }
  return x;
}

}  // namespace

void DecoderConfig::validate() const {
  if (embed == 0 || depth == 0 || state == 0 || expand == 0 || chunk == 0) {
    throw ConfigError("decoder: embed, depth, state, expand and chunk must be positive");
  }
  const std::size_t m = std::size_t{1} << kDownSteps;
  if (height == 0 || width == 0 || height % m != 0 || width % m != 0) {
    throw ConfigError("decoder: plane " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by " + std::to_string(m));
  }
}

std::array<std::vector<std::size_t>, 4> scan_orders(std::size_t height, std::size_t width) {
  std::array<std::vector<std::size_t>, 4> o;
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      o[0].push_back(i * width + j);
      o[2].push_back(i * width + (width - 1 - j));
    }
  }
  o[1].assign(o[0].rbegin(), o[0].rend());
  o[3].assign(o[2].rbegin(), o[2].rend());
  return o;
}

std::array<Tensor, 4> scan_expand(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("scan_expand: expects [N,H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const auto flat = ops::reshape(x, {n, h * w});
  const auto orders = scan_orders(h, w);
  std::array<Tensor, 4> out;
  for (std::size_t k = 0; k < 4; ++k) out[k] = ops::take_last(flat, orders[k]);
  return out;
}

Tensor scan_merge(const std::array<Tensor, 4>& seqs, std::size_t height, std::size_t width) {
  const auto& ref = seqs[0].shape();
  for (const auto& s : seqs) {
    if (s.rank() != 2 || s.shape() != ref || ref[1] != height * width) {
      throw DimensionError("scan_merge: sequences " + shape_str(s.shape()) + " vs " +
                           shape_str(ref) + " for a " + std::to_string(height) + "x" +
                           std::to_string(width) + " map");
    }
  }
  const auto orders = scan_orders(height, width);
  Tensor total;
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<std::size_t> inverse(orders[k].size());
    for (std::size_t t = 0; t < inverse.size(); ++t) inverse[orders[k][t]] = t;
    auto grid = ops::take_last(seqs[k], inverse);
    total = k == 0 ? grid : ops::add(total, grid);
  }
  return ops::reshape(total, {ref[0], height, width});
}

Tensor s6_scan(const ParamStore& p, const std::string& prefix, const Tensor& u,
               ops::ScanVariant variant, std::size_t chunk) {
  if (u.rank() != 2 || u.shape()[1] == 0) {
    throw DimensionError("s6_scan: expects [E,L] with L >= 1, got " + shape_str(u.shape()));
  }
  auto delta = ops::softplus(
      ops::add_bias(ops::matmul(p.get(prefix + ".delta.weight"), u), p.get(prefix + ".delta.bias"), 0));
  auto b = ops::matmul(p.get(prefix + ".b_proj.weight"), u);
  auto c = ops::matmul(p.get(prefix + ".c_proj.weight"), u);
  return ops::selective_scan(u, delta, p.get(prefix + ".a_log"), b, c, p.get(prefix + ".d"),
                             variant, chunk);
}

Tensor vss_block(const ParamStore& p, const std::string& prefix, const Tensor& x,
                 const DecoderConfig& cfg) {
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  auto z = channel_norm(p, prefix + ".norm", x, cfg.norm_eps);
  auto u = pointwise(p, prefix + ".in_proj", z);
  auto gate = ops::silu(pointwise(p, prefix + ".gate_proj", z));
  auto seqs = scan_expand(u);
  for (std::size_t k = 0; k < 4; ++k) {
    seqs[k] = s6_scan(p, prefix + ".dir" + std::to_string(k), seqs[k], cfg.scan, cfg.chunk);
  }
  auto merged = channel_norm(p, prefix + ".out_norm", scan_merge(seqs, h, w), cfg.norm_eps);
  return ops::add(x, pointwise(p, prefix + ".out_proj", ops::mul(merged, gate)));
}

Tensor vmunet_decode(const DecoderConfig& cfg, const ParamStore& p, const Tensor& fmap) {
  if (fmap.shape() != Shape{cfg.embed, cfg.height, cfg.width}) {
    throw DimensionError("vmunet_decode: input " + shape_str(fmap.shape()) + " does not match [" +
                         std::to_string(cfg.embed) + "x" + std::to_string(cfg.height) + "x" +
                         std::to_string(cfg.width) + "]");
  }
  auto s0 = run_stage(p, stage_name(0), fmap, cfg);
  auto s1 = run_stage(p, stage_name(1), pointwise(p, "dec.merge0", space_to_depth(s0)), cfg);
  auto s2 = run_stage(p, stage_name(2), pointwise(p, "dec.merge1", space_to_depth(s1)), cfg);
  auto up1 = depth_to_space(pointwise(p, "dec.expand0", s2));
  auto s3 = run_stage(p, stage_name(3), pointwise(p, "dec.skip0", ops::concat({up1, s1}, 0)), cfg);
  auto up0 = depth_to_space(pointwise(p, "dec.expand1", s3));
  auto s4 = run_stage(p, stage_name(4), pointwise(p, "dec.skip1", ops::concat({up0, s0}, 0)), cfg);
  return ops::sigmoid(pointwise(p, "dec.head", s4));
}

void init_s6_params(ParamStore& p, const std::string& prefix, std::size_t inner,
                    std::size_t state, std::mt19937_64& rng) {
  p.add_uniform(prefix + ".delta.weight", {inner, inner}, inner, rng);
  // Step sizes start log-uniform in [1e-3, 1e-1]; the bias is their softplus inverse.
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  std::vector<double> bias(inner);
  for (auto& b : bias) b = std::log(std::expm1(std::exp(log_dt(rng))));
  p.add(prefix + ".delta.bias", Tensor({inner}, std::move(bias)));
  p.add_uniform(prefix + ".b_proj.weight", {state, inner}, inner, rng);
  p.add_uniform(prefix + ".c_proj.weight", {state, inner}, inner, rng);
  std::vector<double> a_log(inner * state);
  for (std::size_t e = 0; e < inner; ++e)
    for (std::size_t s = 0; s < state; ++s) a_log[e * state + s] = std::log(double(s + 1));
  p.add(prefix + ".a_log", Tensor({inner, state}, std::move(a_log)));
  p.add_constant(prefix + ".d", {inner}, 1.0);
}

void init_vss_params(ParamStore& p, const std::string& prefix, std::size_t width,
                     const DecoderConfig& cfg, std::mt19937_64& rng) {
  const std::size_t inner = cfg.expand * width;
  add_norm(p, prefix + ".norm", width);
  add_pointwise(p, prefix + ".in_proj", inner, width, rng);
  add_pointwise(p, prefix + ".gate_proj", inner, width, rng);
  for (std::size_t k = 0; k < 4; ++k) {
    init_s6_params(p, prefix + ".dir" + std::to_string(k), inner, cfg.state, rng);
  }
  add_norm(p, prefix + ".out_norm", inner);
  add_pointwise(p, prefix + ".out_proj", width, inner, rng);
}

void init_params(const DecoderConfig& cfg, ParamStore& p, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t n = cfg.embed;
  const std::array<std::size_t, 5> widths{n, 2 * n, 4 * n, 2 * n, n};
  auto stage = [&](std::size_t s) {
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      init_vss_params(p, stage_name(s) + ".block" + std::to_string(b), widths[s], cfg, rng);
    }
  };
  stage(0);
  add_pointwise(p, "dec.merge0", 2 * n, 4 * n, rng);
  stage(1);
  add_pointwise(p, "dec.merge1", 4 * n, 8 * n, rng);
  stage(2);
  // Patch expansion widens C -> 4 x C/2 so depth_to_space halves the width.
  add_pointwise(p, "dec.expand0", 8 * n, 4 * n, rng);
  add_pointwise(p, "dec.skip0", 2 * n, 4 * n, rng);
  stage(3);
  add_pointwise(p, "dec.expand1", 4 * n, 2 * n, rng);
  add_pointwise(p, "dec.skip1", n, 2 * n, rng);
  stage(4);
  add_pointwise(p, "dec.head", cfg.depth, n, rng);
}

}  // namespace s2v::decoder
