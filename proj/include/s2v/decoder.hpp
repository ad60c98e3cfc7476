#pragma once

// State-space U-Net decoder. VSS blocks run a 2-D selective scan: the map is
// unrolled in four directions, each direction passes through its own S6
// recurrence, and the four results are folded back and summed.
//
// Topology (widths N, 2N, 4N):
//   stage0 (N, HxW) -> merge0 -> stage1 (2N) -> merge1 -> stage2 (4N, bottleneck)
//   -> expand0 + skip from stage1 -> stage3 (2N) -> expand1 + skip from stage0
//   -> stage4 (N) -> head (N -> D, sigmoid)

#include <array>
#include <random>
#include <string>

#include "s2v/ops.hpp"
#include "s2v/params.hpp"
#include "s2v/tensor.hpp"

namespace s2v::decoder {

struct DecoderConfig {
  std::size_t embed = 32;   // N
  std::size_t depth = 30;   // D, output channels
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t blocks = 2;   // VSS blocks per stage
  std::size_t state = 8;    // S
  std::size_t expand = 2;   // inner width E = expand * stage width
  double norm_eps = 1e-5;
  ops::ScanVariant scan = ops::ScanVariant::kChunked;
  std::size_t chunk = 64;

  static constexpr std::size_t kDownSteps = 2;
  void validate() const;
};

// Row-major order, its reverse, row-major of the horizontally flipped map,
// and that reversed. Each entry is a flat H*W index into the map.
std::array<std::vector<std::size_t>, 4> scan_orders(std::size_t height, std::size_t width);

std::array<Tensor, 4> scan_expand(const Tensor& x);  // [N,H,W] -> 4 x [N,H*W]
Tensor scan_merge(const std::array<Tensor, 4>& seqs, std::size_t height, std::size_t width);

// `prefix` names one direction's parameters: delta.weight [E,E], delta.bias
// [E], b_proj.weight [S,E], c_proj.weight [S,E], a_log [E,S], d [E].
Tensor s6_scan(const ParamStore& p, const std::string& prefix, const Tensor& u,
               ops::ScanVariant variant = ops::ScanVariant::kChunked, std::size_t chunk = 64);

Tensor vss_block(const ParamStore& p, const std::string& prefix, const Tensor& x,
                 const DecoderConfig& cfg);

// [N,H,W] -> [D,H,W] in (0,1).
Tensor vmunet_decode(const DecoderConfig& cfg, const ParamStore& p, const Tensor& fmap);

void init_s6_params(ParamStore& p, const std::string& prefix, std::size_t inner,
                    std::size_t state, std::mt19937_64& rng);
void init_vss_params(ParamStore& p, const std::string& prefix, std::size_t width,
                     const DecoderConfig& cfg, std::mt19937_64& rng);
void init_params(const DecoderConfig& cfg, ParamStore& p, std::mt19937_64& rng);

}  // namespace s2v::decoder
