#pragma once

#include <stdexcept>
#include <string>

namespace pedsense {

// Error categories map 1:1 onto CLI exit codes (input=2, numeric=3,
// divergence=4).
enum class ErrorKind { input, numeric, divergence };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message),
        kind_(kind),
        code_(std::move(code)) {}

  ErrorKind kind() const { return kind_; }
  // Stable machine-readable identifier, e.g. "wav.unsupported_codec".
  const std::string& code() const { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

[[noreturn]] inline void throw_input(const std::string& code,
                                     const std::string& msg) {
  throw Error(ErrorKind::input, code, msg);
}

[[noreturn]] inline void throw_numeric(const std::string& code,
                                       const std::string& msg) {
  throw Error(ErrorKind::numeric, code, msg);
}

[[noreturn]] inline void throw_divergence(const std::string& code,
                                          const std::string& msg) {
  throw Error(ErrorKind::divergence, code, msg);
}

}  // namespace pedsense
