#pragma once

// Finite-difference check of the whole model on the micro configuration:
// hybrid loss of the forward pass, against the input and every parameter.

#include <random>
#include <string>
#include <vector>

#include "s2v/metrics.hpp"
#include "s2v/model.hpp"
#include "support/conditioning.hpp"
#include "support/gradcheck.hpp"

namespace s2v::testing {

inline ModelConfig micro_model_config() {
  ModelConfig cfg;
  cfg.geometry = {4, 5, 6, 3, 8, 8};
  cfg.embed = 4;
  cfg.heads = 2;
  cfg.state = 2;
  cfg.vss_blocks = 1;
  cfg.chunk = 16;
  return cfg;
}

inline GradCheckResult micro_model_gradcheck(std::uint64_t seed, std::size_t coords_per_leaf,
                                             double step = 1e-4) {
  const auto cfg = micro_model_config();
  auto p = init_model(cfg, 1000 + seed);
  std::mt19937_64 rng(2000 + seed);
  condition_for_gradcheck(p, rng);
  const auto& g = cfg.geometry;
  auto x = random_tensor({g.channels, g.time, g.freq}, rng, 0.0, 1.0);
  auto y = random_tensor({g.depth, g.height, g.width}, rng, 0.0, 1.0);
  std::vector<Tensor> leaves{x};
  std::vector<std::string> names{"input"};
  for (std::size_t i = 0; i < p.size(); ++i) {
    leaves.push_back(p.at(i));
    names.push_back(p.name(i));
  }
  return grad_check(
      [&] { return metrics::hybrid_loss(forward(cfg, p, x), y, {0.5, 0.5}); }, leaves, names,
      coords_per_leaf, step, seed);
}

}  // namespace s2v::testing
