#pragma once

#include <stdexcept>
#include <string>

namespace pragtag {

enum class ErrorKind {
  kUsage,       // caller broke a precondition
  kData,        // malformed or inconsistent input records
  kIo,          // file could not be read or written
  kNotFound,    // unknown run or instance
  kValidation,  // annotation invariants violated
  kBackend,     // chat backend failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(ErrorKind::kUsage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::kData, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(ErrorKind::kIo, msg); }

}  // namespace pragtag
