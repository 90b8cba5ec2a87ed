#ifndef SFLOW_ERRORS_HPP
#define SFLOW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sflow {

// Invalid specifications, shape mismatches, out-of-range parameters.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Failed factorizations, ill-conditioned systems, singular covariances.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sflow

#endif  // SFLOW_ERRORS_HPP
