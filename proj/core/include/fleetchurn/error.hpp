#pragma once

#include <stdexcept>
#include <string>

namespace fleetchurn {

// Base class for all recoverable pipeline errors. `code()` is a stable
// machine-readable identifier used in CLI error reports.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

inline Error make_error(const std::string& code, const std::string& msg) {
  return Error(code, code + ": " + msg);
}

}  // namespace fleetchurn
