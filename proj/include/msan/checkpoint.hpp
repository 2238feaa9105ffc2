#pragma once

// MSANCKPT checkpoint files.
//
//   magic       9 bytes   "MSANCKPT\0"
//   version     u32       currently 1
//   descriptor  u32 length + UTF-8 bytes (architecture JSON, may be empty)
//   count       u64       number of tensors
//   manifest    per tensor:
//                 u32 name length, name bytes
//                 u32 dtype (0 = real32, 1 = real64)
//                 u32 flags (bit 0: trainable)
//                 u64 n, c, h, w
//                 u64 byte offset of the payload, relative to payload start
//   payload     raw little-endian tensor data in manifest order
//
// All integers are little-endian.

#include <cstdint>
#include <string>
#include <string_view>

#include "msan/bytes.hpp"
#include "msan/error.hpp"
#include "msan/params.hpp"
#include "msan/tensor.hpp"

namespace msan {

inline constexpr std::string_view kCheckpointMagic{"MSANCKPT\0", 9};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public DataError {
public:
  using DataError::DataError;
};

template <typename T> struct Checkpoint {
  std::string descriptor;
  ParamStore<T> params;
};

template <typename T>
std::string encode_checkpoint(const ParamStore<T> &params, const std::string &descriptor) {
  std::string out(kCheckpointMagic);
  bytes::put_u32(out, kCheckpointVersion);
  bytes::put_u32(out, static_cast<std::uint32_t>(descriptor.size()));
  out += descriptor;
  bytes::put_u64(out, params.size());
  std::uint64_t offset = 0;
  const std::uint64_t elem = sizeof(T);
  for (const auto &e : params.entries()) {
    bytes::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    bytes::put_u32(out, static_cast<std::uint32_t>(dtype_of<T>()));
    bytes::put_u32(out, e.trainable ? 1u : 0u);
    const Shape &s = e.value.shape();
    bytes::put_u64(out, s.n);
    bytes::put_u64(out, s.c);
    bytes::put_u64(out, s.h);
    bytes::put_u64(out, s.w);
    bytes::put_u64(out, offset);
    offset += s.numel() * elem;
  }
  for (const auto &e : params.entries())
    for (T v : e.value.span()) {
      if constexpr (std::is_same_v<T, float>)
        bytes::put_f32(out, v);
      else
        bytes::put_f64(out, v);
    }
  return out;
}

// Tensors stored in either dtype are converted to T.
template <typename T> Checkpoint<T> decode_checkpoint(std::string_view data) {
  bytes::Reader<CheckpointError> rd(data);
  if (rd.take(kCheckpointMagic.size(), "magic") != kCheckpointMagic)
    throw CheckpointError("checkpoint: bad magic");
  const auto version = rd.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint<T> ck;
  const auto dlen = rd.u32("descriptor length");
  ck.descriptor = std::string(rd.take(dlen, "descriptor"));
  const auto count = rd.u64("tensor count");

  struct Item {
    std::string name;
    std::uint32_t dtype, flags;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Item> items;
  for (std::uint64_t i = 0; i < count; ++i) {
    Item it;
    const auto nlen = rd.u32("name length");
    it.name = std::string(rd.take(nlen, "name"));
    it.dtype = rd.u32("dtype");
    if (it.dtype > 1)
      throw CheckpointError("checkpoint: unknown dtype for " + it.name);
    it.flags = rd.u32("flags");
    it.shape.n = rd.u64("shape");
    it.shape.c = rd.u64("shape");
    it.shape.h = rd.u64("shape");
    it.shape.w = rd.u64("shape");
    it.offset = rd.u64("offset");
    items.push_back(std::move(it));
  }
  const std::size_t payload_start = rd.position();
  for (const auto &it : items) {
    const std::size_t elem = it.dtype == 0 ? 4 : 8;
    const std::size_t numel = it.shape.numel();
    if (payload_start + it.offset + numel * elem > data.size())
      throw CheckpointError("checkpoint: payload truncated at " + it.name);
    bytes::Reader<CheckpointError> pr(data.substr(payload_start + it.offset, numel * elem));
    Tensor<T> t(it.shape);
    for (std::size_t k = 0; k < numel; ++k)
      t[k] = static_cast<T>(it.dtype == 0 ? pr.f32("value") : pr.f64("value"));
    ck.params.add(it.name, std::move(t), (it.flags & 1u) != 0);
  }
  return ck;
}

template <typename T>
void save_checkpoint(const std::string &path, const ParamStore<T> &params,
                     const std::string &descriptor) {
  bytes::write_file(path, encode_checkpoint(params, descriptor));
}

template <typename T> Checkpoint<T> load_checkpoint(const std::string &path) {
  return decode_checkpoint<T>(bytes::read_file(path));
}

// Copies every tensor of `from` into `into`; names, shapes and flags must match.
template <typename T> void assign_params(ParamStore<T> &into, const ParamStore<T> &from) {
  if (into.size() != from.size())
    throw CheckpointError("checkpoint: tensor count " + std::to_string(from.size()) +
                          " does not match model registry (" + std::to_string(into.size()) + ")");
  for (auto &e : into.entries()) {
    if (!from.contains(e.name))
      throw CheckpointError("checkpoint: missing tensor " + e.name);
    const auto &src = from.entry(e.name);
    if (!(src.value.shape() == e.value.shape()))
      throw CheckpointError("checkpoint: shape mismatch for " + e.name);
    e.value = src.value;
  }
}

} // namespace msan
