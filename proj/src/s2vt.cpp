#include "s2v/s2vt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "s2v/errors.hpp"

namespace s2v::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "S2VT I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

template <typename T>
T get(const std::string& bytes, std::size_t& pos, const std::string& origin) {
  if (pos + sizeof(T) > bytes.size()) throw DataError(origin + ": truncated S2VT file");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string encode_s2vt(const Tensor& t, DType dtype) {
  std::string out = "S2VT";
  put_u32(out, kS2vtVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (double v : t.data()) {
    if (dtype == DType::kFloat64) {
      char buf[8];
      std::memcpy(buf, &v, 8);
      out.append(buf, 8);
    } else {
      const float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.append(buf, 4);
    }
  }
  return out;
}

Tensor decode_s2vt(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "S2VT") != 0) {
    throw DataError(origin + ": not an S2VT file (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos, origin);
  if (version != kS2vtVersion) {
    throw DataError(origin + ": unsupported S2VT version " + std::to_string(version));
  }
  const auto dtype = get<std::uint32_t>(bytes, pos, origin);
  if (dtype != 1 && dtype != 2) {
    throw DataError(origin + ": unknown S2VT dtype code " + std::to_string(dtype));
  }
  const auto rank = get<std::uint32_t>(bytes, pos, origin);
  if (rank == 0) throw DataError(origin + ": S2VT rank must be positive");
  Shape shape(rank);
  for (auto& e : shape) {
    e = get<std::uint32_t>(bytes, pos, origin);
    if (e == 0) throw DataError(origin + ": S2VT extent of zero");
  }
  const std::size_t n = numel(shape);
  const std::size_t width = dtype == 2 ? 8 : 4;
  if (bytes.size() - pos != n * width) {
    throw DataError(origin + ": S2VT payload size does not match " + shape_str(shape));
  }
  std::vector<double> values(n);
  for (auto& v : values) {
    v = dtype == 2 ? get<double>(bytes, pos, origin)
                   : static_cast<double>(get<float>(bytes, pos, origin));
  }
  return Tensor(std::move(shape), std::move(values));
}

void write_s2vt(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_s2vt(t, dtype);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

Tensor read_s2vt(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_s2vt(ss.str(), path.string());
}

}  // namespace s2v::io
