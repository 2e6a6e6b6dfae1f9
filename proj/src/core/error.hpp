#pragma once

#include <stdexcept>
#include <string>

namespace mohets {

// Error categories; values line up with the CLI exit codes where one exists
// (usage 2, data 3, numeric 4).
enum class ErrorCode : int {
  usage = 2,
  data = 3,
  numeric = 4,
  io = 5,
  internal = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace mohets
