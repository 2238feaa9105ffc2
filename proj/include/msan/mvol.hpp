#pragma once

// MVOL volume files.
//
//   offset  size  field
//   0       4     magic "MVOL"
//   4       4     version (u32, currently 1)
//   8       4     dtype (u32): 0 = real32 volume, 1 = u8 mask
//   12      4     reserved (u32, zero); keeps the dims 8-byte aligned
//   16      24    W, H, L (u64 each)
//   40      ...   payload, voxel order (w * H + h) * L + l, little-endian
//
// Mask payloads hold one byte per voxel with value 0 or 1.

#include <cstdint>
#include <limits>
#include <string>
#include <variant>

#include "msan/bytes.hpp"
#include "msan/error.hpp"
#include "msan/volume.hpp"

namespace msan {

inline constexpr std::uint32_t kMvolVersion = 1;
inline constexpr std::size_t kMvolHeaderBytes = 40;
inline constexpr std::uint64_t kMvolMaxVoxels = std::uint64_t{1} << 34;

class MvolError : public DataError {
public:
  enum class Code { bad_magic, version_mismatch, bad_dtype, truncated, dim_overflow, bad_payload };

  MvolError(Code code, const std::string &msg) : DataError("MVOL: " + msg), code_(code) {}
  Code code() const { return code_; }

private:
  Code code_;
};

namespace detail {

struct MvolTruncated : MvolError {
  explicit MvolTruncated(const std::string &msg) : MvolError(Code::truncated, msg) {}
};

inline std::string mvol_header(std::uint32_t dtype, const Dims &d) {
  std::string out = "MVOL";
  bytes::put_u32(out, kMvolVersion);
  bytes::put_u32(out, dtype);
  bytes::put_u32(out, 0);
  bytes::put_u64(out, d.W);
  bytes::put_u64(out, d.H);
  bytes::put_u64(out, d.L);
  return out;
}

} // namespace detail

inline std::string encode_mvol(const Volume &v) {
  std::string out = detail::mvol_header(0, v.dims());
  out.reserve(out.size() + 4 * v.size());
  for (float x : v.voxels())
    bytes::put_f32(out, x);
  return out;
}

inline std::string encode_mvol(const Mask &m) {
  m.check_binary("write_mvol");
  std::string out = detail::mvol_header(1, m.dims());
  out.reserve(out.size() + m.size());
  for (auto x : m.voxels())
    out.push_back(static_cast<char>(x));
  return out;
}

inline std::variant<Volume, Mask> decode_mvol(std::string_view data) {
  using Code = MvolError::Code;
  bytes::Reader<detail::MvolTruncated> rd(data);
  if (data.size() < 4 || data.substr(0, 4) != "MVOL")
    throw MvolError(Code::bad_magic, "bad magic");
  rd.take(4, "magic");
  const auto version = rd.u32("version");
  if (version != kMvolVersion)
    throw MvolError(Code::version_mismatch, "unsupported version " + std::to_string(version));
  const auto dtype = rd.u32("dtype");
  if (dtype > 1)
    throw MvolError(Code::bad_dtype, "unknown dtype code " + std::to_string(dtype));
  rd.u32("reserved");
  const std::uint64_t W = rd.u64("W"), H = rd.u64("H"), L = rd.u64("L");
  std::uint64_t count = 0;
  if (W == 0 || H == 0 || L == 0 || __builtin_mul_overflow(W, H, &count) ||
      __builtin_mul_overflow(count, L, &count) || count > kMvolMaxVoxels)
    throw MvolError(Code::dim_overflow, "invalid dimensions " + std::to_string(W) + "x" +
                                            std::to_string(H) + "x" + std::to_string(L));
  const Dims dims{static_cast<std::size_t>(W), static_cast<std::size_t>(H),
                  static_cast<std::size_t>(L)};
  const std::uint64_t elem = dtype == 0 ? 4 : 1;
  if (rd.remaining() < count * elem)
    throw MvolError(Code::truncated, "payload truncated: expected " +
                                         std::to_string(count * elem) + " bytes, found " +
                                         std::to_string(rd.remaining()));
  if (rd.remaining() > count * elem)
    throw MvolError(Code::bad_payload, "trailing bytes after payload");
  if (dtype == 0) {
    Volume v(dims);
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = rd.f32("voxel");
    return v;
  }
  Mask m(dims);
  auto payload = rd.take(count, "mask payload");
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto b = static_cast<std::uint8_t>(payload[i]);
    if (b > 1)
      throw MvolError(Code::bad_payload, "mask voxel value " + std::to_string(b) + " not in {0,1}");
    m[i] = b;
  }
  return m;
}

inline void write_mvol(const std::string &path, const Volume &v) {
  bytes::write_file(path, encode_mvol(v));
}
inline void write_mvol(const std::string &path, const Mask &m) {
  bytes::write_file(path, encode_mvol(m));
}

inline std::variant<Volume, Mask> read_mvol(const std::string &path) {
  return decode_mvol(bytes::read_file(path));
}

inline Volume read_volume(const std::string &path) {
  auto v = read_mvol(path);
  if (auto *p = std::get_if<Volume>(&v))
    return std::move(*p);
  throw MvolError(MvolError::Code::bad_dtype, path + " holds a mask, expected a volume");
}

inline Mask read_mask(const std::string &path) {
  auto v = read_mvol(path);
  if (auto *p = std::get_if<Mask>(&v))
    return std::move(*p);
  throw MvolError(MvolError::Code::bad_dtype, path + " holds a volume, expected a mask");
}

} // namespace msan
