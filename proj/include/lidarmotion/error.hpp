#pragma once

#include <stdexcept>
#include <string>

namespace lidarmotion {

// Error categories surfaced by the CLI as single-line machine-parsable
// diagnostics ("error: <category>: <message>").
enum class ErrorCategory {
  config,
  io,
  format,
  shape,
  range,
  mode_prerequisite_missing,
  state,
  internal,
};

const char* to_string(ErrorCategory cat);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}

  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

[[noreturn]] inline void fail(ErrorCategory cat, const std::string& msg) {
  throw Error(cat, msg);
}

inline const char* to_string(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::format: return "format";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::range: return "range";
    case ErrorCategory::mode_prerequisite_missing:
      return "mode-prerequisite-missing";
    case ErrorCategory::state: return "state";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

}  // namespace lidarmotion
