#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxedit {

enum class ErrorCode {
  EmptySet,
  BadFactor,
  NumericFault,
  TrainingFault,
  UnknownPart,
  ShapeFault,
  EmptyAsset,
  GuidanceSchemaFault,
  FixtureMiss,
  ProviderTimeout,
  BadPartCount,
  Precondition,
  IoFault,
  ConfigFault,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::BadFactor: return "BadFactor";
    case ErrorCode::NumericFault: return "NumericFault";
    case ErrorCode::TrainingFault: return "TrainingFault";
    case ErrorCode::UnknownPart: return "UnknownPart";
    case ErrorCode::ShapeFault: return "ShapeFault";
    case ErrorCode::EmptyAsset: return "EmptyAsset";
    case ErrorCode::GuidanceSchemaFault: return "GuidanceSchemaFault";
    case ErrorCode::FixtureMiss: return "FixtureMiss";
    case ErrorCode::ProviderTimeout: return "ProviderTimeout";
    case ErrorCode::BadPartCount: return "BadPartCount";
    case ErrorCode::Precondition: return "Precondition";
    case ErrorCode::IoFault: return "IoFault";
    case ErrorCode::ConfigFault: return "ConfigFault";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// NumericFault raised inside an integration loop; remembers the step index.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long step)
      : Error(ErrorCode::NumericFault, what + " (step " + std::to_string(step) + ")"), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace voxedit
