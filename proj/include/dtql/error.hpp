#pragma once

#include <stdexcept>
#include <string>

namespace dtql {

// Raised when a caller breaks an operation's precondition (bad permutation,
// invalid action, mismatched table sizes, ...).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// Raised for invalid distribution bounds, hyperparameters or config entries.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when exhaustive enumeration is requested above the oracle limit.
struct OracleInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

}  // namespace detail

}  // namespace dtql
