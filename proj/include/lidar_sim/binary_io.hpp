#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "lidar_sim/error.hpp"

namespace lidar_sim::binary {

// Little-endian scalar IO shared by the PGM, LUT, histogram and checkpoint
// formats.

template <typename T>
  requires std::is_arithmetic_v<T>
void write(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read(std::istream& is) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) {
    throw FormatError("truncated binary stream");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size()))) {
    throw FormatError("truncated header: missing magic");
  }
  if (got != magic) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "'");
  }
}

inline void expect_version(std::istream& is, std::uint32_t expected) {
  const auto version = read<std::uint32_t>(is);
  if (version != expected) {
    throw FormatError("unsupported format version " + std::to_string(version));
  }
}

/// Fails unless the stream is exactly exhausted.
inline void expect_end(std::istream& is) {
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after payload");
  }
}

}  // namespace lidar_sim::binary
