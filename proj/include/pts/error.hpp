#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pts {

enum class Errc {
  // depgraph
  CycleDetected,
  UnknownEndpoint,
  DuplicateNode,
  InvalidEdge,
  UnknownNode,
  NotAFile,
  NotATest,
  // history
  MalformedAttempts,
  DuplicateRecord,
  UnknownChange,
  InvalidChange,
  // features
  MissingGraphSnapshot,
  UnknownTarget,
  // boosting
  DegenerateLabels,
  SchemaMismatch,
  LengthMismatch,
  // metrics
  NoFailures,
  NoFaultyChanges,
  EmptyDependentSets,
  NoFailuresOrFlakes,
  InvalidInput,
  // strategy
  NoFailuresInDataset,
  UnreachableTarget,
  // simgen
  InvalidConfig,
  TargetNotDependent,
  // pipeline
  InsufficientFailures,
  NoPriorModel,
  // io
  ParseError,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map them onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code), detail_(message) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace pts
