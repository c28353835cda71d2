#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fiekit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Discrete time index. Non-negative; time-invariant models ignore it.
using TimeIndex = std::int64_t;

using VectorSequence = std::vector<Vector>;

/// Malformed arguments: dimension mismatch, out-of-range parameters, empty inputs.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A feasibility requirement cannot be met (e.g. no discount rate makes a
/// Lyapunov certificate contract).
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Observer design preconditions failed (undetectable / unobservable pair).
class DesignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown inside an iterative solver (non-finite values).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_dim(Eigen::Index actual, Eigen::Index expected, const char* what) {
  if (actual != expected) {
    throw InputError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                     ", got " + std::to_string(actual));
  }
}

}  // namespace detail

}  // namespace fiekit
