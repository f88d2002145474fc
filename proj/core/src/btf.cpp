// SPDX-License-Identifier: Apache-2.0
#include "changecap/btf.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "changecap/error.hpp"

namespace changecap {

namespace {

void put_u64(std::string &out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_btf(const Tensor &t) {
  if (t.rank() > 255) throw ContractError("BTF supports at most 255 dimensions");
  std::string out(kBtfMagic);
  out.push_back(static_cast<char>(kBtfFloat64));
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  out.reserve(out.size() + 8 * t.numel());
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw ContractError("BTF payload must be finite");
    put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Tensor decode_btf(std::string_view bytes) {
  const std::size_t size = bytes.size();
  if (size < kBtfMagic.size()) throw FormatError("truncated magic", size);
  if (bytes.substr(0, 4) != kBtfMagic) throw FormatError("bad magic, expected BTF1", 0);
  if (size < 5) throw FormatError("truncated header: missing dtype", size);
  if (static_cast<unsigned char>(bytes[4]) != kBtfFloat64) {
    throw FormatError("unsupported dtype code " + std::to_string(static_cast<unsigned char>(bytes[4])), 4);
  }
  if (size < 6) throw FormatError("truncated header: missing ndim", size);
  const std::size_t ndim = static_cast<unsigned char>(bytes[5]);
  if (ndim == 0) throw FormatError("ndim must be at least 1", 5);

  std::size_t offset = 6;
  Shape shape;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    if (size < offset + 8) throw FormatError("truncated dimension list", size);
    const std::uint64_t d = get_u64(bytes, offset);
    if (d == 0) throw FormatError("zero dimension", offset);
    if (count > (std::uint64_t{1} << 60) / d) throw FormatError("tensor too large", offset);
    count *= d;
    shape.push_back(static_cast<std::size_t>(d));
    offset += 8;
  }
  const std::uint64_t expected = offset + 8 * count;
  if (size < expected) throw FormatError("truncated payload", size);
  if (size > expected) throw FormatError("trailing bytes after payload", expected);

  std::vector<double> values(static_cast<std::size_t>(count));
  for (double &v : values) {
    v = std::bit_cast<double>(get_u64(bytes, offset));
    offset += 8;
  }
  return Tensor::from_data(std::move(shape), std::move(values));
}

std::string read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return bytes;
}

void write_file_bytes(const std::filesystem::path &path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_btf(const Tensor &t, const std::filesystem::path &path) {
  write_file_bytes(path, encode_btf(t));
}

Tensor read_btf(const std::filesystem::path &path) { return decode_btf(read_file_bytes(path)); }

}  // namespace changecap
