#include "sdgan/errors.hpp"

namespace sdgan {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorKind::RoleMismatch: return "RoleMismatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::UnknownAttribute: return "UnknownAttribute";
    case ErrorKind::InvalidMix: return "InvalidMix";
    case ErrorKind::EmptyDirectory: return "EmptyDirectory";
    case ErrorKind::UnreadableImage: return "UnreadableImage";
    case ErrorKind::MissingLabels: return "MissingLabels";
    case ErrorKind::TrainingFailed: return "TrainingFailed";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::PlacementFailure: return "PlacementFailure";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::MissingPredictor: return "MissingPredictor";
    case ErrorKind::EmptySamples: return "EmptySamples";
    case ErrorKind::InvalidSteps: return "InvalidSteps";
    case ErrorKind::ModelNotLoaded: return "ModelNotLoaded";
    case ErrorKind::UnknownSample: return "UnknownSample";
    case ErrorKind::UnknownEdit: return "UnknownEdit";
    case ErrorKind::EtaOutOfRange: return "EtaOutOfRange";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace sdgan
