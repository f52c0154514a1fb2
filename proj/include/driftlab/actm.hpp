#pragma once

// ACTM binary matrix format, little-endian throughout:
//   "ACTM" | u32 version (=1) | u64 rows | u64 cols | rows*cols f64, row-major

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/matrix.hpp"

namespace driftlab::actm {

inline constexpr std::array<char, 4> kMagic{'A', 'C', 'T', 'M'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw FormatError("ACTM: truncated stream");
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline void write(std::ostream& os, const Matrix& m) {
  os.write(kMagic.data(), kMagic.size());
  detail::put_le<std::uint32_t>(os, kVersion);
  detail::put_le<std::uint64_t>(os, m.rows());
  detail::put_le<std::uint64_t>(os, m.cols());
  for (double x : m.data()) detail::put_le<double>(os, x);
}

inline Matrix read(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw FormatError("ACTM: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kVersion)
    throw FormatError("ACTM: unsupported version " + std::to_string(version));
  const auto rows = detail::get_le<std::uint64_t>(is);
  const auto cols = detail::get_le<std::uint64_t>(is);
  if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols)
    throw FormatError("ACTM: implausible shape");
  Matrix m(rows, cols);
  for (double& x : m.data()) x = detail::get_le<double>(is);
  return m;
}

inline void save(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("ACTM: cannot open " + path.string() + " for writing");
  write(os, m);
  if (!os) throw Error("ACTM: write failed for " + path.string());
}

inline Matrix load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("ACTM: cannot open " + path.string());
  return read(is);
}

}  // namespace driftlab::actm
