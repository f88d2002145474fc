// SPDX-License-Identifier: Apache-2.0
//
// BTF, a minimal binary tensor file:
//
//   offset 0   4 bytes   magic "BTF1"
//   offset 4   u8        dtype code (1 = float64)
//   offset 5   u8        ndim (>= 1)
//   offset 6   ndim x u64 dims, little-endian, each >= 1
//   then       prod(dims) x float64, little-endian IEEE-754, row-major
//
// Nothing may follow the values.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "changecap/tensor.hpp"

namespace changecap {

inline constexpr std::string_view kBtfMagic = "BTF1";
inline constexpr unsigned char kBtfFloat64 = 1;

/// Encodes `t`; throws ContractError on non-finite values or rank > 255.
std::string encode_btf(const Tensor &t);
/// Throws FormatError carrying the offending byte offset.
Tensor decode_btf(std::string_view bytes);

void write_btf(const Tensor &t, const std::filesystem::path &path);
Tensor read_btf(const std::filesystem::path &path);

/// Whole-file helpers shared by the I/O modules. Throw IoError.
std::string read_file_bytes(const std::filesystem::path &path);
void write_file_bytes(const std::filesystem::path &path, std::string_view bytes);

}  // namespace changecap
