#pragma once

#include <stdexcept>
#include <string>

namespace flatlora {

// Shape/dimension violations (mismatched matmul operands, empty last dim, ...).
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// API contract violations (non-scalar loss, label out of range, rank out of range, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Invalid experiment configuration (unknown keys, exclusive fields set together, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Stateful protocol violations (remove_perturbation without a matching apply, ...).
class StateError : public std::logic_error {
 public:
  explicit StateError(const std::string& what) : std::logic_error(what) {}
};

// Non-finite values where the training contract requires finite ones.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace flatlora
