#include "s2v/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "s2v/errors.hpp"
#include "s2v/s2vt.hpp"
#include "s2v/strings.hpp"

namespace s2v {

namespace fs = std::filesystem;

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor& ParamStore::add_uniform(const std::string& name, const Shape& shape, std::size_t fan_in,
                                std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return add(name, Tensor(shape, std::move(v)));
}

Tensor& ParamStore::add_constant(const std::string& name, const Shape& shape, double value) {
  return add(name, Tensor::full(shape, value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& e : entries_) out.add(e.first, e.second.clone());
  return out;
}

bool ParamStore::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.second.all_finite()) return false;
  }
  return true;
}

void ParamStore::save(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream index(dir / "index.txt", std::ios::trunc);
  if (!index) throw DataError("cannot write " + (dir / "index.txt").string());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [name, t] = entries_[i];
    char file[32];
    std::snprintf(file, sizeof(file), "p%04zu.s2vt", i);
    io::write_s2vt(dir / file, t);
    index << name << ' ' << file;
    for (auto e : t.shape()) index << ' ' << e;
    index << '\n';
  }
}

void ParamStore::load(const fs::path& dir) {
  std::ifstream index(dir / "index.txt");
  if (!index) throw DataError("checkpoint " + dir.string() + " has no index.txt");
  std::string line;
  std::size_t seen = 0;
  while (std::getline(index, line)) {
    const auto tok = strings::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() < 2) throw DataError("malformed checkpoint index line: " + line);
    const auto it = index_.find(tok[0]);
    if (it == index_.end()) {
      throw DataError("checkpoint parameter '" + tok[0] + "' does not exist in this model");
    }
    Tensor& dst = entries_[it->second].second;
    const Tensor src = io::read_s2vt(dir / tok[1]);
    if (src.shape() != dst.shape()) {
      throw DataError("checkpoint parameter '" + tok[0] + "' has shape " + shape_str(src.shape()) +
                      ", model expects " + shape_str(dst.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    ++seen;
  }
  if (seen != entries_.size()) {
    throw DataError("checkpoint " + dir.string() + " holds " + std::to_string(seen) + " of " +
                    std::to_string(entries_.size()) + " parameters");
  }
}

}  // namespace s2v
