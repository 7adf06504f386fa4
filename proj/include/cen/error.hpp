#pragma once

#include <stdexcept>
#include <string>

namespace cen {

/// Raised for malformed or out-of-contract inputs (empty masks, shape
/// mismatches, unreadable files). The CLI maps it to exit code 2.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an iterative procedure produces non-finite values.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

}  // namespace detail
}  // namespace cen
