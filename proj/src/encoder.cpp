#include "s2v/encoder.hpp"

#include <cmath>

#include "s2v/errors.hpp"
#include "s2v/ops.hpp"

namespace s2v::encoder {

namespace {

std::string stage_prefix(std::size_t s) { return "enc.stage" + std::to_string(s); }

void add_conv(ParamStore& p, const std::string& name, std::size_t out, std::size_t in,
              std::size_t kh, std::size_t kw, std::mt19937_64& rng) {
  p.add_uniform(name + ".kernel", {out, in, kh, kw}, in * kh * kw, rng);
  p.add_uniform(name + ".bias", {out}, in * kh * kw, rng);
}

void add_norm(ParamStore& p, const std::string& name, std::size_t n) {
  p.add_constant(name + ".gain", {n}, 1.0);
  p.add_constant(name + ".shift", {n}, 0.0);
}

// [C,H,W] convolution through the batched [1,C,H,W] primitive.
Tensor conv(const ParamStore& p, const std::string& name, const Tensor& x,
            const ops::Conv2dOptions& opts) {
  const auto& s = x.shape();
  auto y = ops::conv2d(ops::reshape(x, {1, s[0], s[1], s[2]}), p.get(name + ".kernel"),
                       p.get(name + ".bias"), opts);
  const auto& o = y.shape();
  return ops::reshape(y, {o[1], o[2], o[3]});
}

Tensor channel_norm(const ParamStore& p, const std::string& name, const Tensor& x, double eps) {
  return ops::layer_norm(x, p.get(name + ".gain"), p.get(name + ".shift"), eps, 0);
}

}  // namespace

void EncoderConfig::validate() const {
  if (in_channels == 0 || time == 0 || freq == 0) {
    throw ConfigError("encoder: input geometry must be positive");
  }
  if (embed == 0 || heads == 0 || embed % heads != 0) {
    throw ConfigError("encoder: embed width " + std::to_string(embed) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (stages == 0) throw ConfigError("encoder: stages must be >= 1");
  if (attention_dropout < 0 || attention_dropout >= 1) {
    throw ConfigError("encoder: attention_dropout must lie in [0,1)");
  }
  std::size_t f = freq;
  for (std::size_t s = 0; s < stages; ++s) {
    if (f < 2) {
      throw ConfigError("encoder: frequency extent " + std::to_string(f) + " at stage " +
                        std::to_string(s) + " is too small to down-sample");
    }
    f = (f + 1) / 2;
  }
  if (time > height || f > width) {
    throw ConfigError("encoder: stage output " + std::to_string(time) + "x" + std::to_string(f) +
                      " exceeds target plane " + std::to_string(height) + "x" +
                      std::to_string(width) + "; padding required would be " +
                      std::to_string(static_cast<long long>(height) - static_cast<long long>(time)) +
                      "x" +
                      std::to_string(static_cast<long long>(width) - static_cast<long long>(f)));
  }
}

std::size_t EncoderConfig::final_freq() const {
  std::size_t f = freq;
  for (std::size_t s = 0; s < stages; ++s) f = (f + 1) / 2;
  return f;
}

void init_params(const EncoderConfig& cfg, ParamStore& p, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t n = cfg.embed;
  add_conv(p, "enc.project", n, cfg.in_channels, 3, 3, rng);
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    const auto pre = stage_prefix(s);
    add_conv(p, pre + ".temporal", n, n, 3, 1, rng);
    add_conv(p, pre + ".frequency", n, n, 1, 3, rng);
    add_conv(p, pre + ".joint", n, n, 3, 3, rng);
    add_conv(p, pre + ".fusion", n, 3 * n, 1, 1, rng);
    add_norm(p, pre + ".norm1", n);
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"}) {
      p.add_uniform(pre + w, {n, n}, n, rng);
    }
    add_norm(p, pre + ".norm2", n);
    add_conv(p, pre + ".down", n, n, 1, 3, rng);
  }
}

Tensor project(const ParamStore& p, const Tensor& x) {
  const auto& k = p.get("enc.project.kernel");
  if (x.rank() != 3 || x.shape()[0] != k.shape()[1]) {
    throw DimensionError("project: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(k.shape()[1]) + " channels");
  }
  return ops::silu(conv(p, "enc.project", x, {1, 1, 1, 1}));
}

Tensor mdtf_local_block(const ParamStore& p, const std::string& prefix, const Tensor& x,
                        double eps) {
  auto temporal = conv(p, prefix + ".temporal", x, {1, 1, 1, 0});
  auto frequency = conv(p, prefix + ".frequency", x, {1, 1, 0, 1});
  auto joint = conv(p, prefix + ".joint", x, {1, 1, 1, 1});
  auto fused = conv(p, prefix + ".fusion", ops::concat({temporal, frequency, joint}, 0), {});
  return channel_norm(p, prefix + ".norm1", ops::add(x, fused), eps);
}

Tensor mhsa_global_block(const ParamStore& p, const std::string& prefix, const Tensor& x,
                         std::size_t heads, double eps, double dropout,
                         std::uint64_t dropout_seed, Tensor* weights) {
  const std::size_t n = x.shape()[0], t = x.shape()[1], f = x.shape()[2];
  if (heads == 0 || n % heads != 0) {
    throw ConfigError("mhsa: width " + std::to_string(n) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t tokens = t * f, dh = n / heads;
  const auto seq = ops::permute(ops::reshape(x, {n, tokens}), {1, 0});  // [L,N]
  auto split_heads = [&](const Tensor& m) {
    return ops::permute(ops::reshape(m, {tokens, heads, dh}), {1, 0, 2});  // [h,L,dh]
  };
  const Tensor none = Tensor::zeros({n});
  auto q = split_heads(ops::linear(seq, p.get(prefix + ".attn.wq"), none));
  auto k = split_heads(ops::linear(seq, p.get(prefix + ".attn.wk"), none));
  auto v = split_heads(ops::linear(seq, p.get(prefix + ".attn.wv"), none));
  auto scores = ops::scale(ops::matmul(q, ops::permute(k, {0, 2, 1})),
                           1.0 / std::sqrt(static_cast<double>(dh)));
  auto attn = ops::softmax(scores, -1);
  if (weights != nullptr) *weights = attn.clone();
  if (dropout > 0) attn = ops::dropout(attn, dropout, dropout_seed);
  auto mixed = ops::reshape(ops::permute(ops::matmul(attn, v), {1, 0, 2}), {tokens, n});
  auto out = ops::linear(mixed, p.get(prefix + ".attn.wo"), none);
  auto back = ops::reshape(ops::permute(out, {1, 0}), {n, t, f});
  return channel_norm(p, prefix + ".norm2", ops::add(x, back), eps);
}

Tensor freq_downsample(const ParamStore& p, const std::string& prefix, const Tensor& x) {
  if (x.rank() != 3 || x.shape()[2] < 2) {
    throw DimensionError("freq_downsample: needs F >= 2, got " + shape_str(x.shape()));
  }
  return conv(p, prefix + ".down", x, {1, 2, 0, 1});
}

Tensor pad_to_plane(const Tensor& x, std::size_t height, std::size_t width) {
  const std::size_t t = x.shape()[1], f = x.shape()[2];
  if (t > height || f > width) {
    throw ConfigError("encoder output " + std::to_string(t) + "x" + std::to_string(f) +
                      " exceeds target plane " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  const std::size_t dh = height - t, dw = width - f;
  return ops::pad(x, {{0, 0}, {dh / 2, dh - dh / 2}, {dw / 2, dw - dw / 2}});
}

Tensor encode(const EncoderConfig& cfg, const ParamStore& p, const Tensor& x,
              const ForwardContext& ctx) {
  if (x.shape() != Shape{cfg.in_channels, cfg.time, cfg.freq}) {
    throw DimensionError("encode: input " + shape_str(x.shape()) + " does not match [" +
                         std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.time) + "x" +
                         std::to_string(cfg.freq) + "]");
  }
  auto h = project(p, x);
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    const auto pre = stage_prefix(s);
    h = mdtf_local_block(p, pre, h, cfg.norm_eps);
    const bool drop = ctx.dropout_seed.has_value() && cfg.attention_dropout > 0;
    h = mhsa_global_block(p, pre, h, cfg.heads, cfg.norm_eps, drop ? cfg.attention_dropout : 0.0,
                          drop ? *ctx.dropout_seed + s : 0);
    h = freq_downsample(p, pre, h);
  }
  return pad_to_plane(h, cfg.height, cfg.width);
}

}  // namespace s2v::encoder
