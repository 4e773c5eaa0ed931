#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mgnet/tensor.hpp"

namespace mgnet {

// Checkpoint container: magic "MGN1", u32 version, u32 tensor count, then per
// tensor: u32 name length + UTF-8 name, u8 dtype (0 = f32, 1 = f64), u32 ndim,
// ndim u32 dims, raw little-endian values. Round-trips are bit-exact.

namespace detail {

inline void write_u32(std::ostream& os, u32 v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline u32 read_u32(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError(cat(path, ": truncated reading ", what, " at offset ", is.tellg()));
  return static_cast<u32>(b[0]) | static_cast<u32>(b[1]) << 8 | static_cast<u32>(b[2]) << 16 |
         static_cast<u32>(b[3]) << 24;
}

template <class T>
void write_values_le(std::ostream& os, const std::vector<T>& values) {
  // Little-endian scalar encoding, independent of host byte order.
  for (T v : values) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::reverse(buf, buf + sizeof(T));
#endif
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }
}

template <class T>
void read_values_le(std::istream& is, std::vector<T>& values, const std::string& path) {
  for (T& v : values) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
      throw IoError(cat(path, ": truncated tensor data at offset ", is.tellg()));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::reverse(buf, buf + sizeof(T));
#endif
    std::memcpy(&v, buf, sizeof(T));
  }
}

template <class T>
constexpr u8 dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <class T>
void write_tensor_block(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_u32(os, static_cast<u32>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const u8 tag = dtype_tag<T>();
  os.write(reinterpret_cast<const char*>(&tag), 1);
  write_u32(os, 4);
  write_u32(os, static_cast<u32>(t.shape.n));
  write_u32(os, static_cast<u32>(t.shape.c));
  write_u32(os, static_cast<u32>(t.shape.h));
  write_u32(os, static_cast<u32>(t.shape.w));
  write_values_le(os, t.data);
}

template <class T>
std::pair<std::string, TensorPtr<T>> read_tensor_block(std::istream& is,
                                                       const std::string& path) {
  const u32 name_len = read_u32(is, path, "name length");
  std::string name(name_len, '\0');
  if (!is.read(name.data(), name_len)) throw IoError(cat(path, ": truncated tensor name"));
  u8 tag = 0;
  if (!is.read(reinterpret_cast<char*>(&tag), 1)) throw IoError(cat(path, ": truncated dtype"));
  if (tag != dtype_tag<T>())
    throw IoError(cat(path, ": tensor '", name, "' has dtype tag ", int(tag),
                      ", run precision expects ", int(dtype_tag<T>())));
  const u32 ndim = read_u32(is, path, "ndim");
  if (ndim != 4) throw IoError(cat(path, ": tensor '", name, "' has ndim ", ndim, ", want 4"));
  i64 dims[4];
  for (auto& d : dims) d = read_u32(is, path, "dim");
  auto t = make_tensor<T>({dims[0], dims[1], dims[2], dims[3]});
  read_values_le(is, t->data, path);
  return {std::move(name), std::move(t)};
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'M', 'G', 'N', '1'};
inline constexpr u32 kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, TensorPtr<T>>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(cat("cannot open for write: ", path));
  os.write(kCheckpointMagic, 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<u32>(tensors.size()));
  for (const auto& [name, t] : tensors) detail::write_tensor_block(os, name, *t);
  if (!os) throw IoError(cat("write failed: ", path));
}

template <class T>
std::vector<std::pair<std::string, TensorPtr<T>>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(cat("cannot open: ", path));
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError(cat(path, ": bad magic, not a checkpoint file"));
  const u32 version = detail::read_u32(is, path, "version");
  if (version != kCheckpointVersion)
    throw IoError(cat(path, ": unsupported version ", version));
  const u32 count = detail::read_u32(is, path, "tensor count");
  std::vector<std::pair<std::string, TensorPtr<T>>> out;
  out.reserve(count);
  for (u32 i = 0; i < count; ++i) out.push_back(detail::read_tensor_block<T>(is, path));
  return out;
}

}  // namespace mgnet
