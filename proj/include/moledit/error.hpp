#pragma once

#include <stdexcept>
#include <string>

namespace moledit {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorClass {
  Usage,      // bad flags or configuration
  Data,       // malformed input files, parse failures, I/O
  Invariant,  // an internal contract was violated
};

/// Base exception carrying a stable machine-readable code such as
/// "UnclosedRingBond" alongside the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message,
        ErrorClass cls = ErrorClass::Data)
      : std::runtime_error(code + ": " + message),
        code_(std::move(code)),
        message_(message),
        class_(cls) {}

  const std::string& code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }
  ErrorClass error_class() const noexcept { return class_; }

 private:
  std::string code_;
  std::string message_;
  ErrorClass class_;
};

}  // namespace moledit
