#pragma once

#include <stdexcept>
#include <string>

namespace irra {

// Exception hierarchy. The CLI maps ContractError and its children to exit
// code 1 and IoError/ParseError to exit code 2.

class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Raised for inputs on which a quantity is undefined (e.g. zero-norm rows).
class DegenerateInputError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Raised by training when a loss component turns NaN or infinite.
class NumericalError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace irra
