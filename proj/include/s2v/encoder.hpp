#pragma once

// Spectrogram encoder: 3x3 projection, then per stage a multi-directional
// local block, a multi-head self-attention block and a stride-2 frequency
// down-sampling, then zero-padding of the [N,T,F'] map to the [N,H,W] plane.
// T maps to H and F to W.

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "s2v/params.hpp"
#include "s2v/tensor.hpp"

namespace s2v::encoder {

struct EncoderConfig {
  std::size_t in_channels = 0;
  std::size_t time = 0;
  std::size_t freq = 0;
  std::size_t embed = 32;  // N
  std::size_t heads = 4;
  std::size_t stages = 2;
  std::size_t height = 64;
  std::size_t width = 64;
  double attention_dropout = 0.0;
  double norm_eps = 1e-5;

  // Throws ConfigError for N % heads != 0, zero stages, or a plane too small.
  void validate() const;
  std::size_t final_freq() const;
};

// Attention dropout is active only when `seed` is set.
struct ForwardContext {
  std::optional<std::uint64_t> dropout_seed;
};

void init_params(const EncoderConfig& cfg, ParamStore& params, std::mt19937_64& rng);

Tensor project(const ParamStore& p, const Tensor& x);  // [C,T,F] -> [N,T,F]
Tensor mdtf_local_block(const ParamStore& p, const std::string& prefix, const Tensor& x,
                        double eps);
// `weights`, when given, receives the [heads, T*F, T*F] attention matrix.
Tensor mhsa_global_block(const ParamStore& p, const std::string& prefix, const Tensor& x,
                         std::size_t heads, double eps, double dropout = 0.0,
                         std::uint64_t dropout_seed = 0, Tensor* weights = nullptr);
Tensor freq_downsample(const ParamStore& p, const std::string& prefix, const Tensor& x);
// Zero-pads [N,T,F] to [N,H,W]; odd deficits put the extra row/column last.
Tensor pad_to_plane(const Tensor& x, std::size_t height, std::size_t width);

Tensor encode(const EncoderConfig& cfg, const ParamStore& p, const Tensor& x,
              const ForwardContext& ctx = {});

}  // namespace s2v::encoder
