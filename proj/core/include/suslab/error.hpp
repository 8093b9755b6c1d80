#pragma once

#include <stdexcept>
#include <string>

namespace suslab {

/// Failure categories surfaced by the library. The CLI maps these to exit codes.
enum class ErrorKind {
  Length,             // sequence longer than the model or window allows
  Numeric,            // NaN / Inf where finite values are required
  Precondition,       // caller violated a documented precondition
  DimensionMismatch,  // shapes or hyperparameters disagree
  MalformedHeader,    // container header unreadable or inconsistent
  TruncatedPayload,   // container payload shorter than the manifest says
  CapExceeded,        // dense oracle path refused (D above the cap)
  VocabularyOverflow, // synthetic world does not fit the vocabulary budget
  UndefinedStatistic, // e.g. correlation of a constant vector
  Config,             // bad run configuration
  MissingArtifact,    // pipeline stage input not found
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace suslab
