#pragma once

// Full spectrogram-to-volume network: encoder followed by the state-space
// U-Net decoder.

#include <cstdint>
#include <optional>

#include "s2v/decoder.hpp"
#include "s2v/encoder.hpp"
#include "s2v/geometry.hpp"
#include "s2v/params.hpp"

namespace s2v {

struct ModelConfig {
  Geometry geometry;
  std::size_t embed = 32;
  std::size_t heads = 4;
  std::size_t stages = 2;
  double attention_dropout = 0.0;
  std::size_t vss_blocks = 2;
  std::size_t state = 8;
  std::size_t vss_expand = 2;
  ops::ScanVariant scan = ops::ScanVariant::kChunked;
  std::size_t chunk = 64;

  encoder::EncoderConfig encoder() const;
  decoder::DecoderConfig decoder() const;
  void validate() const;
};

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

// x [C,T,F] -> [D,H,W]. A dropout seed enables attention dropout.
Tensor forward(const ModelConfig& cfg, const ParamStore& params, const Tensor& x,
               std::optional<std::uint64_t> dropout_seed = std::nullopt);

}  // namespace s2v
