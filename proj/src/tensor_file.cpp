#include "cvla/tensor_file.hpp"

#include "cvla/binary_io.hpp"
#include "cvla/errors.hpp"

namespace cvla {

namespace {

constexpr std::string_view kCtfMagic = "CTF1";

}  // namespace

std::vector<char> encode_ctf(const TensorF& tensor) {
  if (tensor.rank() > 255) throw ContractError("CTF supports at most 255 dimensions");
  ByteWriter out;
  out.bytes(kCtfMagic);
  out.u8(static_cast<std::uint8_t>(tensor.rank()));
  for (std::size_t d : tensor.dims()) out.u32(static_cast<std::uint32_t>(d));
  for (float v : tensor.data()) out.f32(v);
  return out.buffer();
}

TensorF decode_ctf(std::vector<char> data, const std::string& source) {
  ByteReader in(std::move(data), source);
  if (in.bytes(kCtfMagic.size(), "magic") != kCtfMagic) {
    throw FormatError(source + ": not a CTF1 tensor file (bad magic)");
  }
  Shape dims(in.u8("rank"));
  for (std::size_t& d : dims) d = in.u32("dims");
  const std::size_t count = shape_size(dims);
  if (in.remaining() != 4 * count) {
    throw FormatError(source + ": payload is " + std::to_string(in.remaining()) + " bytes but dims " +
                      shape_string(dims) + " need " + std::to_string(4 * count));
  }
  TensorF tensor(std::move(dims));
  for (float& v : tensor.data()) v = in.f32("payload");
  return tensor;
}

void write_ctf(const std::filesystem::path& path, const TensorF& tensor) {
  write_file(path, encode_ctf(tensor));
}

TensorF read_ctf(const std::filesystem::path& path) {
  return decode_ctf(read_file(path), path.string());
}

}  // namespace cvla
