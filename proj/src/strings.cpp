#include "s2v/strings.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "s2v/errors.hpp"

namespace s2v::strings {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
  const auto p = s.find('#');
  return p == std::string::npos ? s : s.substr(0, p);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t == "inf") return INFINITY;
  double v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("not a number: '" + s + "'");
  }
  return v;
}

long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("not an integer: '" + s + "'");
  }
  return v;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& tok : split_ws(s)) {
    const long long v = parse_int(tok);
    if (v < 0) throw ConfigError("negative extent in '" + s + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace s2v::strings
