#pragma once

#include <stdexcept>
#include <string>

namespace ccnet {

/// Shape mismatch, bad extents, or an inconsistent model/stage configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf appeared in a forward or backward value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: calling an operation outside its precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ccnet
