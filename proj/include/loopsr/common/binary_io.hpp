#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopsr/common/error.hpp"

namespace loopsr::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  void magic(std::string_view four) { raw(four.data(), four.size()); }

  template <typename T>
  void put(T value) {
    raw(&value, sizeof(T));
  }

  void put_f64s(std::span<const double> values) {
    raw(values.data(), values.size() * sizeof(double));
  }

  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }

  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader; every short read raises FormatError(kTruncated).
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view four) {
    std::array<char, 4> got{};
    raw(got.data(), 4);
    if (std::string_view(got.data(), 4) != four) {
      throw FormatError(FormatErrorKind::kBadMagic,
                        "expected '" + std::string(four) + "'");
    }
  }

  void expect_version(std::uint32_t supported) {
    const auto v = get<std::uint32_t>();
    if (v != supported) {
      throw FormatError(FormatErrorKind::kBadVersion,
                        "version " + std::to_string(v) + ", supported " +
                            std::to_string(supported));
    }
  }

  template <typename T>
  T get() {
    T value;
    raw(&value, sizeof(T));
    return value;
  }

  void get_f64s(std::span<double> out) { raw(out.data(), out.size() * sizeof(double)); }

  std::string get_string(std::size_t max_len = 1u << 16) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw FormatError(FormatErrorKind::kMalformed, "string too long");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(FormatErrorKind::kMalformed, "trailing bytes after payload");
    }
  }

 private:
  void raw(void* p, std::size_t n) {
    if (n > remaining()) {
      throw FormatError(FormatErrorKind::kTruncated,
                        "needed " + std::to_string(n) + " bytes, " +
                            std::to_string(remaining()) + " left");
    }
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace loopsr::io
