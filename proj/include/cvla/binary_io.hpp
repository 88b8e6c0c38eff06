#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cvla {

/// Little-endian encoder into an in-memory buffer.
class ByteWriter {
 public:
  void bytes(std::string_view data) { buffer_.insert(buffer_.end(), data.begin(), data.end()); }
  void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  const std::vector<char>& buffer() const { return buffer_; }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> buffer_;
};

/// Little-endian decoder; running past the end throws FormatError naming what was being read.
class ByteReader {
 public:
  ByteReader(std::vector<char> data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  std::string bytes(std::size_t n, const char* what);
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  float f32(const char* what) { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what))); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::uint64_t get(int width, const char* what);
  void need(std::size_t n, const char* what) const;

  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

/// Whole-file helpers; failures raise IoError.
std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& data);

}  // namespace cvla
