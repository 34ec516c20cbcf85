// SPDX-License-Identifier: Apache-2.0
#include "latentkf/error.hpp"

namespace latentkf {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kInvalidState: return "invalid state";
    case ErrorCode::kShape: return "shape mismatch";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kDivergence: return "training divergence";
    case ErrorCode::kNumerical: return "numerical failure";
    case ErrorCode::kDoubleBackward: return "double backward";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown error";
}

}  // namespace latentkf
