#pragma once

// Little-endian encoding helpers for the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "msan/error.hpp"

namespace msan::bytes {

inline void put_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_u64(std::string &out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string &out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string &out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

// Sequential reader over an in-memory buffer. Reading past the end throws
// the supplied truncation exception type.
template <typename Truncated> class Reader {
public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view take(std::size_t n, const char *what) {
    if (n > data_.size() - pos_)
      throw Truncated(std::string("truncated while reading ") + what);
    std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char *what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  std::uint64_t u64(const char *what) {
    auto s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  float f32(const char *what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char *what) { return std::bit_cast<double>(u64(what)); }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string &path, const std::string &contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError("cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out)
    throw DataError("short write to " + path);
}

} // namespace msan::bytes
