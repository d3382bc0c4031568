#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace comap {

enum class ErrorKind {
  kInvalidArgument,
  kMissingFile,
  kMalformedRecord,
  kMalformedHeader,
  kUnsupportedCameraModel,
  kOutOfBoundsPixel,
  kDuplicateSourcePixel,
  kIoError,
  kNonPositiveDepth,
  kDegenerateGeometry,
  kBehindCamera,
  kViewIdMismatch,
  kEmptyInput,
  kInconsistentN,
  kOutOfBounds,
  kNoCorrespondences,
  kEmptyBase,
  kMapViewMismatch,
  kDimensionMismatch,
  kInsufficientPairs,
  kNonPositiveScale,
  kFrameMismatch,
  kSamplingStarvation,
  kNonFiniteLoss,
  kDegenerateSpec,
};

std::string_view error_kind_name(ErrorKind kind);

// Process exit code for a failure of this kind: 2 input/validation,
// 3 numeric failure, 4 I/O.
int exit_code_for(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace comap
