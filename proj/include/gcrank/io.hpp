#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcrank {

// Raised for malformed inputs and unreadable/unwritable artifacts.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when training or scoring produces non-finite values.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace io {

// All binary containers are little-endian with fixed-width fields.

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw DataError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) throw DataError("unexpected end of file");
}

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

inline void write_u32(std::ostream& os, std::uint32_t v) { write_le<std::uint32_t>(os, v); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_le<std::uint64_t>(os, v); }
inline std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
inline std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }
inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n);
  return s;
}

inline void write_magic(std::ostream& os, const char magic[4]) { write_bytes(os, magic, 4); }

inline void expect_magic(std::istream& is, const char magic[4], const std::string& what) {
  char buf[4];
  read_bytes(is, buf, 4);
  if (std::memcmp(buf, magic, 4) != 0) throw DataError("bad magic bytes: not a " + what + " file");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path);
  return is;
}

inline std::uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for hashing: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace io
}  // namespace gcrank
