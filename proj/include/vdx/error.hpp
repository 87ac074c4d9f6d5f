#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace vdx {

// Usage errors map to process exit code 1, runtime errors to 2.
enum class ErrKind { Usage, Runtime };

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, std::string code, const std::string& message)
      : std::runtime_error("ERROR:" + code + ": " + message),
        kind_(kind),
        code_(std::move(code)) {}

  ErrKind kind() const { return kind_; }
  const std::string& code() const { return code_; }

 private:
  ErrKind kind_;
  std::string code_;
};

[[noreturn]] inline void throw_usage(const std::string& code, const std::string& message) {
  throw Error(ErrKind::Usage, code, message);
}

[[noreturn]] inline void throw_runtime(const std::string& code, const std::string& message) {
  throw Error(ErrKind::Runtime, code, message);
}

}  // namespace vdx
