#include "mgalign/errors.hpp"

namespace mgalign {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ManifestParse: return "ManifestParse";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::ValidationFailure: return "ValidationFailure";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::NeedTwoSubtexts: return "NeedTwoSubtexts";
    case ErrorKind::EmptyCandidates: return "EmptyCandidates";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::EmptySubtexts: return "EmptySubtexts";
    case ErrorKind::EmptyClassList: return "EmptyClassList";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::EmptySample: return "EmptySample";
    case ErrorKind::BadK: return "BadK";
    case ErrorKind::EmptyLabelSet: return "EmptyLabelSet";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::ClassOverlap: return "ClassOverlap";
    case ErrorKind::InsufficientVideos: return "InsufficientVideos";
    case ErrorKind::NeedThreeGroups: return "NeedThreeGroups";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
  }
  return "Unknown";
}

namespace {
std::string compose(ErrorKind kind, std::string_view module, const std::string& detail) {
  std::string out(module);
  out += '.';
  out += to_string(kind);
  if (!detail.empty()) {
    out += ": ";
    out += detail;
  }
  return out;
}
}  // namespace

Error::Error(ErrorKind kind, std::string_view module, const std::string& detail)
    : std::runtime_error(compose(kind, module, detail)),
      kind_(kind),
      module_(module),
      detail_(detail) {}

}  // namespace mgalign
