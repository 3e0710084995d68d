#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tca {

enum class ErrorKind {
  InvalidInput,
  InvalidConfig,
  InsufficientSamples,
  NumericalFailure,
  SingularMatrix,
  Diverged,
  DegenerateLabels,
  ParseError,
  Undefined,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::Undefined: return "Undefined";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the ErrorKind tags so
/// callers (notably the CLI) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Parse failures report where in the input they happened: a byte offset for
/// binary formats, a line number for text.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(ErrorKind::ParseError, what + " (at " + std::to_string(position) + ")"),
        position_(position) {}

  [[nodiscard]] std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace tca
