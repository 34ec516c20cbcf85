// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace latentkf {

/// Error categories shared by the C++ core and the C API status codes.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kInvalidState = 2,
  kShape = 3,
  kFormat = 4,
  kIo = 5,
  kDivergence = 6,
  kNumerical = 7,
  kDoubleBackward = 8,
  kInternal = 99,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define LATENTKF_DEFINE_ERROR(Name, Code)                                    \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  }

LATENTKF_DEFINE_ERROR(InvalidArgument, kInvalidArgument);
LATENTKF_DEFINE_ERROR(InvalidState, kInvalidState);
LATENTKF_DEFINE_ERROR(ShapeError, kShape);
LATENTKF_DEFINE_ERROR(FormatError, kFormat);
LATENTKF_DEFINE_ERROR(IoError, kIo);
LATENTKF_DEFINE_ERROR(DivergenceError, kDivergence);
LATENTKF_DEFINE_ERROR(NumericalError, kNumerical);
LATENTKF_DEFINE_ERROR(DoubleBackwardError, kDoubleBackward);

#undef LATENTKF_DEFINE_ERROR

const char* to_string(ErrorCode code) noexcept;

}  // namespace latentkf
