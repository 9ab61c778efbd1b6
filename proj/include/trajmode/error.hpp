#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trajmode {

enum class ErrorKind {
  Parse,         // malformed input text (PLT, labels, dataset, JSON)
  Io,            // filesystem failures
  Config,        // invalid or unknown configuration values
  Shape,         // tensor shape mismatch
  Precondition,  // caller violated an operation's precondition
  Mismatch,      // checkpoint / pipeline configuration disagree
  Checkpoint,    // bad magic, version, truncated or incomplete checkpoint
  Data,          // dataset content unusable (empty, single class, ...)
  Internal,      // broken internal invariant
};

std::string_view to_string(ErrorKind kind);

/// The single exception type thrown by the library. The kind doubles as the
/// machine-parseable category printed by the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Parse error carrying a 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace trajmode
