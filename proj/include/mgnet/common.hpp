#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mgnet {

using u8 = std::uint8_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor/pyramid dimension violations.
class ShapeError : public Error {
public:
  using Error::Error;
};

// File parsing / serialization failures.
class IoError : public Error {
public:
  using Error::Error;
};

// Config file or architecture description problems.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Runtime training failures (non-finite values, divergence).
class TrainError : public Error {
public:
  using Error::Error;
};

template <class... A>
std::string cat(A&&... a) {
  std::ostringstream os;
  (os << ... << a);
  return os.str();
}

// FNV-1a over a byte range. Used for config hashes and dataset digests.
inline u64 fnv1a64(const void* data, std::size_t len, u64 h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline u64 fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace mgnet
