#include "oodlab/binary_io.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <iterator>

#include "oodlab/errors.hpp"

namespace oodlab {

void ByteReader::need(std::size_t n) const {
  if (n > data_.size() - offset_) {
    throw FormatError("unexpected end of data: wanted " + std::to_string(n) + " bytes, " +
                          std::to_string(data_.size() - offset_) + " left",
                      offset_);
  }
}

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string out(data_.data() + offset_, n);
  offset_ += n;
  return out;
}

std::string ByteReader::text() {
  const std::size_t at = offset_;
  const std::uint64_t n = u64();
  if (n > remaining()) {
    throw FormatError("length prefix " + std::to_string(n) + " exceeds remaining data", at);
  }
  return bytes(static_cast<std::size_t>(n));
}

void ByteReader::expect_magic(std::string_view magic) {
  const std::size_t at = offset_;
  if (remaining() < magic.size() || bytes(magic.size()) != magic) {
    throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", at);
  }
}

void ByteReader::expect_end() const {
  if (offset_ != data_.size()) {
    throw FormatError(std::to_string(data_.size() - offset_) + " trailing bytes", offset_);
  }
}

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::string sha256_hex(std::span<const char> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span<const char>(text.data(), text.size()));
}

}  // namespace oodlab
