#pragma once

#include <stdexcept>
#include <string>

namespace kgli {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation (e.g. a spacelike
// interval passed to proper_time).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Index or coordinate outside a detector / grid box.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Malformed or degenerate input data.
class InputError : public Error {
 public:
  using Error::Error;
};

// Finite-difference stencil would leave the grid.
class StencilError : public Error {
 public:
  using Error::Error;
};

// Physical or numerical parameter out of range (xi <= 0, lambda <= 0, CFL ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Numerical blow-up detected during time stepping.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace kgli
