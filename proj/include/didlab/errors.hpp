#pragma once

#include <stdexcept>
#include <string>

namespace didlab {

// Error taxonomy shared with the C API: the numeric kind maps 1:1 onto the
// DIDLAB_ERR_* codes in didlab.h.
enum class ErrorKind : int {
  invalid = 1,     // malformed input data, bad configuration, broken precondition
  io = 2,          // file system / parse failures
  estimation = 3,  // estimator could not produce a result (separation, no donors, ...)
  internal = 4,    // numerical breakdown that should not happen on valid input
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

[[noreturn]] inline void fail_invalid(const std::string& message) {
  fail(ErrorKind::invalid, message);
}
[[noreturn]] inline void fail_io(const std::string& message) {
  fail(ErrorKind::io, message);
}
[[noreturn]] inline void fail_estimation(const std::string& message) {
  fail(ErrorKind::estimation, message);
}

}  // namespace didlab
