#include "xmodal/error.hpp"

namespace xmodal {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidId: return "InvalidId";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::UnknownSplit: return "UnknownSplit";
    case ErrorCode::DuplicatePair: return "DuplicatePair";
    case ErrorCode::UnresolvedId: return "UnresolvedId";
    case ErrorCode::ModalityMismatch: return "ModalityMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::TraceMismatch: return "TraceMismatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::MissingOptimizerState: return "MissingOptimizerState";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::VocabExhausted: return "VocabExhausted";
  }
  return "Unknown";
}

}  // namespace xmodal
