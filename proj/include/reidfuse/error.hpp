#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reidfuse {

enum class ErrorCode {
  InvalidArgument,
  InvalidConfig,
  Io,
  DuplicateStream,
  ZeroDimension,
  MalformedRecord,
  DuplicateFrameInTrack,
  DegeneratePolygon,
  OverlappingSplits,
  DimensionMismatch,
  UnknownStream,
  NonFiniteValue,
  ZeroVector,
  DuplicateEmbedding,
  CoincidentCenters,
  DegenerateHull,
  CoincidentCentroids,
  ZeroLengthLateralLine,
  MissingEmbedding,
  MissingStream,
  ShapeMismatch,
  EmptyStreamSet,
  NoRelevant,
  EmptyQuerySet,
  NoVerifiedMatches,
  QuerySetMismatch,
  EmptyAPs,
  LengthMismatch,
  UnknownQuery,
  GalleryNotBuilt,
  UnknownTrajectory,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so the
/// CLI and HTTP layers can report it in structured form.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace reidfuse
