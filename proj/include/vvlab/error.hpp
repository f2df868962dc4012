#pragma once

#include <stdexcept>
#include <string>

namespace vvlab {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An index (token id, vector id, target) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input data or files failed validation (tokenizer mismatch, bad corpus, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Training produced non-finite values or left its trust region.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace vvlab
