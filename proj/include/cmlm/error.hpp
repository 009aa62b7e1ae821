#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cmlm {

// Every failure raised by the library carries the name of the module that
// produced it, so the CLI can print "module: cause" on a single line.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

}  // namespace cmlm
