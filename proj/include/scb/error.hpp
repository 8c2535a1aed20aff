#pragma once

#include <stdexcept>
#include <string>

namespace scb {

// Base class for all library errors. The CLI maps these onto exit codes:
// ValidationError and friends -> 2, DivergenceError -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class RoundingError : public Error {
 public:
  using Error::Error;
};

class TransferError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

class FormulaMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace scb
