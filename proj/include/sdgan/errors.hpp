#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdgan {

enum class ErrorKind {
  ZeroVector,
  ShapeMismatch,
  DimensionMismatch,
  ResolutionMismatch,
  RoleMismatch,
  IoError,
  FormatError,
  EmptyDataset,
  DivergenceDetected,
  UnknownAttribute,
  InvalidMix,
  EmptyDirectory,
  UnreadableImage,
  MissingLabels,
  TrainingFailed,
  InsufficientSamples,
  SingleClass,
  NonConvergence,
  PlacementFailure,
  LengthMismatch,
  MissingPredictor,
  EmptySamples,
  InvalidSteps,
  ModelNotLoaded,
  UnknownSample,
  UnknownEdit,
  EtaOutOfRange,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports carries one of the kinds above so callers
// (tests, the CLI, the HTTP layer) can branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace sdgan
