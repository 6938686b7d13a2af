#pragma once

#include <stdexcept>
#include <string>

namespace bseg {

// Raised when a caller breaks an operation's preconditions (shape mismatch,
// out-of-range argument). Always a programming or configuration error.
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Runtime failure of an otherwise well-formed request: infeasible scene
// parameters, diverged training, missing artifacts, corrupt files.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bseg
