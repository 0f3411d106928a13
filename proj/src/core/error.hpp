// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace maxico {

enum class ErrorCode {
  invalid_argument = 1,
  io = 2,
  state = 3,
  numeric = 4,
};

// Single exception type used throughout the core. The C API boundary maps
// the code onto its integer status constants.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline void check(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

inline void check_arg(bool cond, const std::string& msg) {
  check(cond, ErrorCode::invalid_argument, msg);
}

}  // namespace maxico
