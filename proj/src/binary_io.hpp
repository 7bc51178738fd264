#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "phasenet/error.hpp"

namespace phasenet::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native stores on little-endian hosts");

template <typename T>
void put(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw IoError(std::string("truncated stream reading ") + what);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void get_bytes(std::istream& in, char* dst, std::size_t n, const char* what) {
  if (!in.read(dst, static_cast<std::streamsize>(n)))
    throw IoError(std::string("truncated stream reading ") + what);
}

}  // namespace phasenet::detail
