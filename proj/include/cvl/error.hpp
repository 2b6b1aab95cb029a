#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cvl {

enum class ErrorCode {
  DimensionMismatch,
  NotInFront,
  EmptySequence,
  RadiusTooLarge,
  DegenerateQuery,
  AllCellsInvalid,
  BatchTooSmall,
  UnknownId,
  InvalidArgument,
  FormatError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotInFront: return "NotInFront";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::RadiusTooLarge: return "RadiusTooLarge";
    case ErrorCode::DegenerateQuery: return "DegenerateQuery";
    case ErrorCode::AllCellsInvalid: return "AllCellsInvalid";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace cvl
