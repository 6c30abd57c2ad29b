#pragma once

#include <stdexcept>
#include <string>

namespace negsamp {

enum class ErrorKind {
  Config,   // invalid configuration or arguments
  Input,    // missing or unreadable inputs, malformed files
  Data,     // inputs readable but violating a data invariant
  Numeric,  // non-finite values, divergence
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Input: return "input";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace negsamp
