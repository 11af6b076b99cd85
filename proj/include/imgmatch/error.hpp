#pragma once

#include <stdexcept>
#include <string>

namespace imgmatch {

enum class ErrorKind {
  kShape,
  kDomain,
  kNumeric,
  kPrecondition,
  kParse,
  kIo,
};

const char* to_string(ErrorKind kind);

// All library failures are reported through this type. The C API maps the
// kind onto a status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace imgmatch
