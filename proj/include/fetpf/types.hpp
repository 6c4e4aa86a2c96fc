#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fetpf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Point in model state space.
using StateVector = Eigen::VectorXd;

/// Raised when the filter loses all usable weight or produces non-finite states.
class FilterDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed experiment configuration or CLI arguments.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File read/write failure; the message carries the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace detail
}  // namespace fetpf
