#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scatter1d {

enum class ErrorKind {
  InvalidArgument,
  ParseError,
  NonIntegrable,
  WindowMissing,
  ZeroWavenumber,
  DegenerateMatching,
  ScanTooCoarse,
  NotABoundState,
  KGridMismatch,
  ImaginaryResidue,
  SingularFredholm,
  WindowMismatch,
  NonSimpleZero,
  ComplexNodes,
  RankAmbiguous,
  SearchBudgetExhausted,
  TheoremViolationSuspected,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::NonIntegrable: return "NonIntegrable";
    case ErrorKind::WindowMissing: return "WindowMissing";
    case ErrorKind::ZeroWavenumber: return "ZeroWavenumber";
    case ErrorKind::DegenerateMatching: return "DegenerateMatching";
    case ErrorKind::ScanTooCoarse: return "ScanTooCoarse";
    case ErrorKind::NotABoundState: return "NotABoundState";
    case ErrorKind::KGridMismatch: return "KGridMismatch";
    case ErrorKind::ImaginaryResidue: return "ImaginaryResidue";
    case ErrorKind::SingularFredholm: return "SingularFredholm";
    case ErrorKind::WindowMismatch: return "WindowMismatch";
    case ErrorKind::NonSimpleZero: return "NonSimpleZero";
    case ErrorKind::ComplexNodes: return "ComplexNodes";
    case ErrorKind::RankAmbiguous: return "RankAmbiguous";
    case ErrorKind::SearchBudgetExhausted: return "SearchBudgetExhausted";
    case ErrorKind::TheoremViolationSuspected: return "TheoremViolationSuspected";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace scatter1d
