#pragma once

// "S2VT" binary tensor files:
//   bytes 0..3   magic "S2VT"
//   u32          format version (1)
//   u32          dtype code (1 = float32, 2 = float64)
//   u32          rank
//   u32 * rank   extents
//   payload      row-major values
// All integers and values are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>

#include "s2v/tensor.hpp"

namespace s2v::io {

inline constexpr std::uint32_t kS2vtVersion = 1;

enum class DType : std::uint32_t { kFloat32 = 1, kFloat64 = 2 };

std::string encode_s2vt(const Tensor& t, DType dtype = DType::kFloat64);
Tensor decode_s2vt(const std::string& bytes, const std::string& origin = "<memory>");

void write_s2vt(const std::filesystem::path& path, const Tensor& t,
                DType dtype = DType::kFloat64);
Tensor read_s2vt(const std::filesystem::path& path);

}  // namespace s2v::io
