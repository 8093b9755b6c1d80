#include "suslab/error.hpp"

namespace suslab {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Length: return "length error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Precondition: return "precondition error";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::MalformedHeader: return "malformed header";
    case ErrorKind::TruncatedPayload: return "truncated payload";
    case ErrorKind::CapExceeded: return "dimension cap exceeded";
    case ErrorKind::VocabularyOverflow: return "vocabulary overflow";
    case ErrorKind::UndefinedStatistic: return "undefined statistic";
    case ErrorKind::Config: return "config error";
    case ErrorKind::MissingArtifact: return "missing artifact";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

}  // namespace suslab
