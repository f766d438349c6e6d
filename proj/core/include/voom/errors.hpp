#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voom {

enum class ErrorCode {
  TooFewPoints,
  DegenerateFit,
  NotPositiveDefinite,
  NotAnEllipsoid,
  BehindCamera,
  DegenerateConic,
  DuplicateId,
  UnknownKeyFrame,
  UnknownObject,
  UnknownMapPoint,
  TooFewMatches,
  TooFewViews,
  DegenerateBaseline,
  InvalidSpec,
  NoOverlap,
  InvalidInput,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Thrown by every fallible operation in the library. The code identifies
/// the failure class; the message carries the details.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace voom
