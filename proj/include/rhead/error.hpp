#pragma once

#include <stdexcept>
#include <string>

namespace rhead {

// Base of every error raised by the library. `kind()` is the stable,
// machine-readable tag used in CLI error JSON.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class InputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "input_error"; }
};

class TraceIntegrityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "trace_integrity_error"; }
};

class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "undefined_correlation"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

// Malformed frame on the runner wire.
class ProtocolError : public Error {
 public:
  ProtocolError(std::size_t line, const std::string& reason)
      : Error("protocol error at line " + std::to_string(line) + ": " + reason),
        line_(line), reason_(reason) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& reason() const noexcept { return reason_; }
  const char* kind() const noexcept override { return "protocol_error"; }

 private:
  std::size_t line_;
  std::string reason_;
};

// The runner answered with an error frame.
class RunnerError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "runner_error"; }
};

class UnsupportedOpError : public RunnerError {
 public:
  using RunnerError::RunnerError;
  const char* kind() const noexcept override { return "unsupported_op"; }
};

class RunnerTimeout : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "runner_timeout"; }
};

class RunnerCrash : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "runner_crash"; }
};

}  // namespace rhead
