#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace topoattn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid specification or configuration value (bad p, dt, epochs...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operands whose dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable input data.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A numerical run produced NaN/Inf. `where` is the step (simulation) or
/// batch (training) index at which it was detected.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t where)
      : Error(what), where_(where) {}
  std::size_t where() const noexcept { return where_; }

 private:
  std::size_t where_;
};

}  // namespace topoattn
