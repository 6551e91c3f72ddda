#pragma once

// Little-endian byte streams shared by the dataset, checkpoint and attack
// file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oodlab {

class ByteWriter {
 public:
  void bytes(std::string_view raw) { buffer_.insert(buffer_.end(), raw.begin(), raw.end()); }
  void u32(std::uint32_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  /// u64 length followed by the raw text.
  void text(std::string_view s) {
    u64(s.size());
    bytes(s);
  }

  const std::vector<char>& buffer() const noexcept { return buffer_; }

 private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
  }

  std::vector<char> buffer_;
};

/// Bounds-checked reader; every failure throws FormatError with the offset.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

  std::string bytes(std::size_t n);
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string text();

  /// Fails unless the magic bytes match.
  void expect_magic(std::string_view magic);
  /// Fails when unread bytes remain.
  void expect_end() const;

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return data_.size() - offset_; }

 private:
  void need(std::size_t n) const;

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(data_[offset_ + i])) << (8 * i);
    }
    offset_ += sizeof(U);
    return v;
  }

  std::vector<char> data_;
  std::size_t offset_ = 0;
};

std::vector<char> read_file_bytes(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames, so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::string_view(text));
}

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const char> bytes);
std::string sha256_hex(std::string_view text);
inline std::string sha256_hex(const std::string& text) { return sha256_hex(std::string_view(text)); }

}  // namespace oodlab
