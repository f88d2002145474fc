// SPDX-License-Identifier: Apache-2.0
#include "changecap/error.hpp"

namespace changecap {

const char *error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_shape: return "invalid-shape";
    case ErrorKind::shape: return "shape";
    case ErrorKind::invalid_geometry: return "invalid-geometry";
    case ErrorKind::invalid_target: return "invalid-target";
    case ErrorKind::empty_loss: return "empty-loss";
    case ErrorKind::contract: return "contract";
    case ErrorKind::range: return "range";
    case ErrorKind::config: return "config";
    case ErrorKind::format: return "format";
    case ErrorKind::incompatible: return "incompatible";
    case ErrorKind::length: return "length";
    case ErrorKind::augmentation_unavailable: return "augmentation-unavailable";
    case ErrorKind::invalid_instruction: return "invalid-instruction";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace changecap
