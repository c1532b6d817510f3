#pragma once

#include <stdexcept>
#include <string>

namespace plankd {

// Malformed or truncated dataset/checkpoint files. CLI exit code 2.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values reached a training loop. CLI exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace plankd
