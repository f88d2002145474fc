// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace changecap {

enum class ErrorKind : std::uint8_t {
  invalid_shape,
  shape,
  invalid_geometry,
  invalid_target,
  empty_loss,
  contract,
  range,
  config,
  format,
  incompatible,
  length,
  augmentation_unavailable,
  invalid_instruction,
  io,
};

/// Short machine-readable tag, used as the first token of CLI error lines.
const char *error_kind_name(ErrorKind kind) noexcept;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string &message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CHANGECAP_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string &message) : Error(ErrorKind::Kind, message) {} \
  };

CHANGECAP_DEFINE_ERROR(InvalidShapeError, invalid_shape)
CHANGECAP_DEFINE_ERROR(ShapeError, shape)
CHANGECAP_DEFINE_ERROR(InvalidGeometryError, invalid_geometry)
CHANGECAP_DEFINE_ERROR(InvalidTargetError, invalid_target)
CHANGECAP_DEFINE_ERROR(EmptyLossError, empty_loss)
CHANGECAP_DEFINE_ERROR(ContractError, contract)
CHANGECAP_DEFINE_ERROR(RangeError, range)
CHANGECAP_DEFINE_ERROR(ConfigError, config)
CHANGECAP_DEFINE_ERROR(IncompatibleError, incompatible)
CHANGECAP_DEFINE_ERROR(LengthError, length)
CHANGECAP_DEFINE_ERROR(AugmentationUnavailableError, augmentation_unavailable)
CHANGECAP_DEFINE_ERROR(InvalidInstructionError, invalid_instruction)
CHANGECAP_DEFINE_ERROR(IoError, io)

#undef CHANGECAP_DEFINE_ERROR

/// Malformed binary input. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string &message, std::uint64_t offset)
      : Error(ErrorKind::format,
              message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace changecap
