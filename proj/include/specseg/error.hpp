#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace specseg {

enum class ErrorCode {
  ShapeMismatch,
  NonPowerOfTwoLength,
  LengthNotDivisible,
  SingularCovariance,
  BatchTooSmall,
  ConfigInvalid,
  FormatVersionMismatch,
  CorruptBlob,
  ModeMismatch,
  UnsupportedModulation,
  PlacementInfeasible,
  DiskWrite,
  CorruptRecord,
  VersionMismatch,
  SplitMissing,
  TauOutOfRange,
  DatasetEmpty,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonPowerOfTwoLength: return "NonPowerOfTwoLength";
    case ErrorCode::LengthNotDivisible: return "LengthNotDivisible";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::CorruptBlob: return "CorruptBlob";
    case ErrorCode::ModeMismatch: return "ModeMismatch";
    case ErrorCode::UnsupportedModulation: return "UnsupportedModulation";
    case ErrorCode::PlacementInfeasible: return "PlacementInfeasible";
    case ErrorCode::DiskWrite: return "DiskWrite";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::SplitMissing: return "SplitMissing";
    case ErrorCode::TauOutOfRange: return "TauOutOfRange";
    case ErrorCode::DatasetEmpty: return "DatasetEmpty";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace specseg
