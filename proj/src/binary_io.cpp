#include "cvla/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "cvla/errors.hpp"

namespace cvla {

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(source_ + ": truncated while reading " + what + " (need " +
                      std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                      std::to_string(remaining()) + ")");
  }
}

std::string ByteReader::bytes(std::size_t n, const char* what) {
  need(n, what);
  std::string out(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return out;
}

std::uint64_t ByteReader::get(int width, const char* what) {
  need(static_cast<std::size_t>(width), what);
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  }
  pos_ += static_cast<std::size_t>(width);
  return v;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace cvla
