#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "sunet/errors.hpp"

namespace sunet {

// Little-endian scalar streams shared by the SUNPC1 / SUNVG1 / SUNCK1 formats.

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void write(T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }

  void write_bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), n); }

  void write_string(const std::string& s) {
    write<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    write_bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T read() {
    unsigned char buf[sizeof(T)];
    read_bytes(buf, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
  }

  void read_bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("truncated file: " + source_);
  }

  std::string read_string(std::size_t max_len = 1u << 20) {
    const auto n = read<std::uint32_t>();
    if (n > max_len) throw FormatError("string length out of range in " + source_);
    std::string s(n, '\0');
    read_bytes(s.data(), n);
    return s;
  }

  void expect_magic(const char* magic, std::size_t n) {
    std::string got(n, '\0');
    in_.read(got.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n || std::memcmp(got.data(), magic, n) != 0) {
      throw FormatError("bad magic in " + source_ + ", expected " + std::string(magic, n));
    }
  }

  void expect_eof() {
    if (in_.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + source_);
  }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace sunet
