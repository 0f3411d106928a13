// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "core/error.hpp"
#include "core/tensor.hpp"

namespace maxico::io {

// Little binary helpers for the checkpoint / buffer formats. Fixed-width
// little-endian fields (the build targets a single host; no cross-endian
// support is attempted).

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  check(os.good(), ErrorCode::io, "write failed");
}

template <typename T>
T read_pod(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(is.good(), ErrorCode::io, "read failed (truncated stream)");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
  check(os.good(), ErrorCode::io, "write failed");
}

inline std::string read_string(std::istream& is) {
  const auto n = read_pod<uint64_t>(is);
  check(n <= (1u << 20), ErrorCode::io, "implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  check(is.good(), ErrorCode::io, "read failed (truncated stream)");
  return s;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_pod<int32_t>(os, t.dim(i));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(T) * t.size()));
  check(os.good(), ErrorCode::io, "write failed");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  const auto rank = read_pod<uint32_t>(is);
  check(rank <= 8, ErrorCode::io, "implausible tensor rank");
  std::vector<int> shape(rank);
  for (auto& d : shape) {
    d = read_pod<int32_t>(is);
    check(d >= 0, ErrorCode::io, "negative tensor dim");
  }
  Tensor<T> t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(T) * t.size()));
  check(is.good(), ErrorCode::io, "read failed (truncated stream)");
  return t;
}

}  // namespace maxico::io
