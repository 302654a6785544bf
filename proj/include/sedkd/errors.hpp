#pragma once

#include <stdexcept>
#include <string>

namespace sedkd {

// Every failure raised by the library carries one of these kinds. The C API
// and the CLI fold them into the coarser status codes in sedkd.h.
enum class ErrorKind {
  dimension,       // shape mismatch between operands
  parameter,       // argument outside its documented range
  contract,        // caller violated a precondition (empty input, non-scalar loss)
  numeric_domain,  // e.g. log of a non-positive value
  numeric_failure, // NaN/inf produced during training
  data,            // malformed or inconsistent dataset content
  format,          // bad magic / truncated binary file
  parse,           // malformed text file
  io,              // filesystem failure
  version,         // incompatible checkpoint
};

const char* error_kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) throw Error(kind, what);
}

}  // namespace sedkd
