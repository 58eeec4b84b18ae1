#pragma once

#include <stdexcept>
#include <string>

namespace fedddl {

enum class ErrorCode {
  ShapeMismatch,
  LabelOutOfRange,
  EmptyArchitecture,
  InvalidSpec,
  EmptyDataset,
  NoObject,
  BoxOutOfBounds,
  ObjectTooLarge,
  TemperatureNonPositive,
  NoClientsSelected,
  InvalidConfig,
  Io,
  Format,
  NonFinite,
};

const char* to_string(ErrorCode code);

// Every failure in the core library surfaces as this exception; the C API
// translates the code into a status value.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyArchitecture: return "EmptyArchitecture";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NoObject: return "NoObject";
    case ErrorCode::BoxOutOfBounds: return "BoxOutOfBounds";
    case ErrorCode::ObjectTooLarge: return "ObjectTooLarge";
    case ErrorCode::TemperatureNonPositive: return "TemperatureNonPositive";
    case ErrorCode::NoClientsSelected: return "NoClientsSelected";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
    case ErrorCode::NonFinite: return "NonFinite";
  }
  return "Unknown";
}

}  // namespace fedddl
