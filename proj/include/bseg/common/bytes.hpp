#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bseg {

// Little-endian binary writer/reader used by the checkpoint and depth formats.
class ByteWriter {
 public:
  void raw(std::string_view bytes);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void string(std::string_view s);  // u32 length prefix
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : data_(bytes) {}
  std::string_view raw(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string string();
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const char> data_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const char> bytes);
std::string sha256_hex(std::string_view text);

}  // namespace bseg
