#pragma once

#include <stdexcept>
#include <string>

namespace cpo {

/// An error with a short machine-readable code, e.g. "schema" or "io".
/// The command line prints these as "error: <code>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message) : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace cpo
