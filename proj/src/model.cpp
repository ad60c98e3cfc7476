#include "s2v/model.hpp"

#include <random>

namespace s2v {

encoder::EncoderConfig ModelConfig::encoder() const {
  encoder::EncoderConfig e;
  e.in_channels = geometry.channels;
  e.time = geometry.time;
  e.freq = geometry.freq;
  e.embed = embed;
  e.heads = heads;
  e.stages = stages;
  e.height = geometry.height;
  e.width = geometry.width;
  e.attention_dropout = attention_dropout;
  return e;
}

decoder::DecoderConfig ModelConfig::decoder() const {
  decoder::DecoderConfig d;
  d.embed = embed;
  d.depth = geometry.depth;
  d.height = geometry.height;
  d.width = geometry.width;
  d.blocks = vss_blocks;
  d.state = state;
  d.expand = vss_expand;
  d.scan = scan;
  d.chunk = chunk;
  return d;
}

void ModelConfig::validate() const {
  encoder().validate();
  decoder().validate();
}

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore p;
  encoder::init_params(cfg.encoder(), p, rng);
  decoder::init_params(cfg.decoder(), p, rng);
  return p;
}

Tensor forward(const ModelConfig& cfg, const ParamStore& params, const Tensor& x,
               std::optional<std::uint64_t> dropout_seed) {
  const auto fmap = encoder::encode(cfg.encoder(), params, x, {dropout_seed});
  return decoder::vmunet_decode(cfg.decoder(), params, fmap);
}

}  // namespace s2v
