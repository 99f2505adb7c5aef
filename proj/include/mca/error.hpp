#pragma once

#include <stdexcept>
#include <string>

namespace mca {

/// Bad input: malformed files, inconsistent shapes, out-of-range parameters.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// A numerical precondition failed (singular metric, degenerate spectrum, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mca
