#include "afft/error.hpp"

namespace afft {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ShapeRejected: return "ShapeRejected";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::WrongChannelCount: return "WrongChannelCount";
    case ErrorCode::DecodeFailure: return "DecodeFailure";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::NoContactFrame: return "NoContactFrame";
    case ErrorCode::NoIntersection: return "NoIntersection";
    case ErrorCode::NoSkinPixels: return "NoSkinPixels";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::TooFewMatches: return "TooFewMatches";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::AllPointsOutOfBounds: return "AllPointsOutOfBounds";
    case ErrorCode::EmptyCrop: return "EmptyCrop";
    case ErrorCode::AllPointsOutsideBbox: return "AllPointsOutsideBbox";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownRecord: return "UnknownRecord";
    case ErrorCode::LockFailure: return "LockFailure";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroNormVector: return "ZeroNormVector";
    case ErrorCode::EmptyMemory: return "EmptyMemory";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ZeroFeature: return "ZeroFeature";
    case ErrorCode::MissingFeatureFile: return "MissingFeatureFile";
    case ErrorCode::AllSourcesFailed: return "AllSourcesFailed";
    case ErrorCode::EmptyPrediction: return "EmptyPrediction";
    case ErrorCode::EmptyMaskRegion: return "EmptyMaskRegion";
    case ErrorCode::MissingMask: return "MissingMask";
    case ErrorCode::MissingPrediction: return "MissingPrediction";
    case ErrorCode::ZeroDepth: return "ZeroDepth";
    case ErrorCode::EmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorCode::NonOrthonormalRotation: return "NonOrthonormalRotation";
    case ErrorCode::NoGraspInRange: return "NoGraspInRange";
  }
  return "Unknown";
}

std::string_view owning_module(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::UnsupportedDtype:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::ShapeRejected:
    case ErrorCode::IoFailure:
    case ErrorCode::WrongChannelCount:
    case ErrorCode::DecodeFailure:
    case ErrorCode::ParseFailure:
    case ErrorCode::InvalidInput:
      return "tensor-io";
    case ErrorCode::NoContactFrame:
    case ErrorCode::NoIntersection:
    case ErrorCode::NoSkinPixels:
    case ErrorCode::EmptyImage:
    case ErrorCode::TooFewMatches:
    case ErrorCode::DegenerateConfiguration:
    case ErrorCode::NoConsensus:
    case ErrorCode::AllPointsOutOfBounds:
    case ErrorCode::EmptyCrop:
    case ErrorCode::AllPointsOutsideBbox:
      return "extraction";
    case ErrorCode::DuplicateId:
    case ErrorCode::UnknownRecord:
    case ErrorCode::LockFailure:
      return "memory";
    case ErrorCode::DimensionMismatch:
    case ErrorCode::ZeroNormVector:
    case ErrorCode::EmptyMemory:
      return "retrieval";
    case ErrorCode::OutOfBounds:
    case ErrorCode::ZeroFeature:
    case ErrorCode::MissingFeatureFile:
    case ErrorCode::AllSourcesFailed:
      return "correspondence";
    case ErrorCode::EmptyPrediction:
    case ErrorCode::EmptyMaskRegion:
    case ErrorCode::MissingMask:
    case ErrorCode::MissingPrediction:
      return "evaluation";
    case ErrorCode::ZeroDepth:
    case ErrorCode::EmptyCandidateSet:
    case ErrorCode::NonOrthonormalRotation:
    case ErrorCode::NoGraspInRange:
      return "grasp";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace afft
