#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace afft {

enum class ErrorCode {
  // tensor-io
  BadMagic,
  UnsupportedVersion,
  UnsupportedDtype,
  TruncatedPayload,
  NonFiniteValue,
  ShapeRejected,
  IoFailure,
  WrongChannelCount,
  DecodeFailure,
  ParseFailure,
  InvalidInput,
  // extraction
  NoContactFrame,
  NoIntersection,
  NoSkinPixels,
  EmptyImage,
  TooFewMatches,
  DegenerateConfiguration,
  NoConsensus,
  AllPointsOutOfBounds,
  EmptyCrop,
  AllPointsOutsideBbox,
  // memory
  DuplicateId,
  UnknownRecord,
  LockFailure,
  // retrieval
  DimensionMismatch,
  ZeroNormVector,
  EmptyMemory,
  // correspondence
  OutOfBounds,
  ZeroFeature,
  MissingFeatureFile,
  AllSourcesFailed,
  // evaluation
  EmptyPrediction,
  EmptyMaskRegion,
  MissingMask,
  MissingPrediction,
  // grasp
  ZeroDepth,
  EmptyCandidateSet,
  NonOrthonormalRotation,
  NoGraspInRange,
};

std::string_view to_string(ErrorCode code);

/// Name of the module that owns an error code ("tensor-io", "retrieval", ...).
std::string_view owning_module(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& detail);

}  // namespace afft
