#pragma once

#include <stdexcept>
#include <string>

namespace pcu {

// Raised when an operation is called with arguments violating its contract
// (bad sizes, k too large, shape mismatches).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during optimization (NaN gradient, non-finite loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ParameterError(message);
}

}  // namespace detail
}  // namespace pcu
