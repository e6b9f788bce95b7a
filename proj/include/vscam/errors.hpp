#pragma once

#include <stdexcept>
#include <string>

namespace vscam {

/// Tensor shapes do not line up for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An argument is outside the operation's domain (bad K, empty axis, label out of range, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Object used in a state that no longer permits the call (e.g. backward on a consumed tape).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Model or CAM configuration is invalid or inconsistent with the weights.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file on disk is malformed, truncated, or does not match the expected schema.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vscam
