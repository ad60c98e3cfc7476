#pragma once

// Run configuration: one flat `key = value` schema holding every tunable
// default. Files use the same syntax, `#` starts a comment.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "s2v/geometry.hpp"
#include "s2v/metrics.hpp"
#include "s2v/model.hpp"

namespace s2v {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string kind;  // "int", "real", "bool", "text" or "a|b|c"
  std::string help;
};

const std::vector<ConfigKey>& config_schema();

class Config {
 public:
  Config();  // every key at its default

  // Throws ConfigError for an unknown key (listing all valid keys) or a value
  // that does not parse as the key's kind.
  void set(const std::string& key, const std::string& value);
  void set_assignment(const std::string& key_eq_value);  // "k=v"
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);

  const std::string& text(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::size_t size(const std::string& key) const;  // non-negative integer
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  // Canonical dump: every key in schema order.
  std::string format() const;

  // Typed views.
  ModelConfig model(const Geometry& g) const;
  metrics::SsimConfig ssim() const;
  metrics::LossWeights loss() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string valid_keys_message();
std::string format_geometry(const Geometry& g);
Geometry parse_geometry(const std::string& s);

}  // namespace s2v
