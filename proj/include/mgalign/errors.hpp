#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mgalign {

enum class ErrorKind {
  // embedding_store
  MissingFile,
  ManifestParse,
  ShapeMismatch,
  NonFinite,
  IoFailure,
  ValidationFailure,
  ZeroVector,
  // subtext_metrics
  NeedTwoSubtexts,
  EmptyCandidates,
  InvalidConfig,
  // alignment_core
  DimMismatch,
  EmptySubtexts,
  EmptyClassList,
  // training
  NonFiniteGradient,
  EmptySample,
  // eval_harness
  BadK,
  EmptyLabelSet,
  ConfigInvalid,
  ClassOverlap,
  InsufficientVideos,
  NeedThreeGroups,
  DegenerateVariance,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception. `what()` reads "<module>.<Kind>: <detail>" so the
/// CLI can print it verbatim as a single machine-parsable line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string_view module, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string module_;
  std::string detail_;
};

}  // namespace mgalign
