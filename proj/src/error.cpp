#include "comap/error.hpp"

namespace comap {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kMissingFile: return "MissingFile";
    case ErrorKind::kMalformedRecord: return "MalformedRecord";
    case ErrorKind::kMalformedHeader: return "MalformedHeader";
    case ErrorKind::kUnsupportedCameraModel: return "UnsupportedCameraModel";
    case ErrorKind::kOutOfBoundsPixel: return "OutOfBoundsPixel";
    case ErrorKind::kDuplicateSourcePixel: return "DuplicateSourcePixel";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::kBehindCamera: return "BehindCamera";
    case ErrorKind::kViewIdMismatch: return "ViewIdMismatch";
    case ErrorKind::kEmptyInput: return "EmptyInput";
    case ErrorKind::kInconsistentN: return "InconsistentN";
    case ErrorKind::kOutOfBounds: return "OutOfBounds";
    case ErrorKind::kNoCorrespondences: return "NoCorrespondences";
    case ErrorKind::kEmptyBase: return "EmptyBase";
    case ErrorKind::kMapViewMismatch: return "MapViewMismatch";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kInsufficientPairs: return "InsufficientPairs";
    case ErrorKind::kNonPositiveScale: return "NonPositiveScale";
    case ErrorKind::kFrameMismatch: return "FrameMismatch";
    case ErrorKind::kSamplingStarvation: return "SamplingStarvation";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kDegenerateSpec: return "DegenerateSpec";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNonFiniteLoss:
    case ErrorKind::kNonPositiveScale:
    case ErrorKind::kDegenerateGeometry:
    case ErrorKind::kInsufficientPairs:
    case ErrorKind::kSamplingStarvation:
      return 3;
    case ErrorKind::kIoError:
    case ErrorKind::kMissingFile:
      return 4;
    default:
      return 2;
  }
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
      kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace comap
