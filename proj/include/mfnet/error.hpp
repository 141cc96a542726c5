#pragma once

#include <stdexcept>
#include <string>

namespace mfnet {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes of inputs disagree with the network configuration.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An input violates a documented precondition (bounds, finiteness, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// A trajectory produced non-finite values.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration. `path` names the offending field, e.g. "network.L".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace mfnet
