#pragma once

#include <stdexcept>
#include <string>

namespace gem {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// Raised by file readers; the message names the file and the defect.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Tensor files whose payload violates the non-negative activation contract.
class NegativeActivation : public FormatError {
 public:
  using FormatError::FormatError;
};

class NoValidPositive : public Error {
 public:
  using Error::Error;
};

class InsufficientCandidates : public Error {
 public:
  InsufficientCandidates(const std::string& what, std::size_t shortfall)
      : Error(what), shortfall_(shortfall) {}
  std::size_t shortfall() const noexcept { return shortfall_; }

 private:
  std::size_t shortfall_;
};

}  // namespace gem
