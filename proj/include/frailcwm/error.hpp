#pragma once

#include <stdexcept>
#include <string>

namespace frailcwm {

// Malformed input: bad files, schemas, configs. Messages name the row/column.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A survival fit cannot start: too few rows, no events, rank-deficient design.
class FitPreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace frailcwm
