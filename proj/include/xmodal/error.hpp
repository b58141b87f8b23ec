#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmodal {

enum class ErrorCode {
  // embedding-store
  MalformedHeader,
  MalformedRecord,
  DimensionMismatch,
  DuplicateId,
  InvalidId,
  NonFiniteValue,
  IoFailure,
  MalformedRow,
  UnknownSplit,
  DuplicatePair,
  UnresolvedId,
  ModalityMismatch,
  // projection-net / losses / miner
  InvalidConfig,
  ShapeMismatch,
  NonFiniteInput,
  TraceMismatch,
  BatchTooSmall,
  // trainer
  EmptyDataset,
  MissingOptimizerState,
  ConfigMismatch,
  NumericalFailure,
  // retrieval / tagging
  MissingGroundTruth,
  VocabExhausted,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace xmodal
