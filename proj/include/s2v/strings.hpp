#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace s2v::strings {

std::string trim(const std::string& s);
std::string strip_comment(const std::string& s);  // drops everything after '#'
std::vector<std::string> split_ws(const std::string& s);

// Strict parsers; throw ConfigError on trailing garbage or out-of-range input.
double parse_double(const std::string& s);
long long parse_int(const std::string& s);
std::vector<std::size_t> parse_sizes(const std::string& s);

// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

}  // namespace s2v::strings
