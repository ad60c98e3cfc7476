#pragma once

// Named, ordered collection of trainable tensors. Names are stable
// checkpoint identifiers such as `enc.stage0.temporal.kernel`.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2v/tensor.hpp"

namespace s2v {

class ParamStore {
 public:
  // Registers a new parameter; throws ConfigError on a duplicate name.
  Tensor& add(const std::string& name, Tensor value);
  // Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)).
  Tensor& add_uniform(const std::string& name, const Shape& shape, std::size_t fan_in,
                      std::mt19937_64& rng);
  Tensor& add_constant(const std::string& name, const Shape& shape, double value);

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }
  Tensor& at(std::size_t i) { return entries_[i].second; }

  void zero_grad();
  // Detached copy with identical names, order and values.
  ParamStore clone() const;
  bool all_finite() const;

  // Directory of S2VT files plus `index.txt` ("<name> <file> <shape>").
  void save(const std::filesystem::path& dir) const;
  // Loads into the existing parameters; names and shapes must match exactly.
  void load(const std::filesystem::path& dir);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace s2v
