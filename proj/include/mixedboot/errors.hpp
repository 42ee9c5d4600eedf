#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mixedboot {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input parsing failure; `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class FitError : public Error {
 public:
  using Error::Error;
};

// Stacked (weighted) design is not of full column rank.
class SingularDesignError : public FitError {
 public:
  using FitError::FitError;
};

// Optimizer gave up; carries the best point it found.
class ConvergenceError : public FitError {
 public:
  ConvergenceError(const std::string& what, double best_sigma2_u, double best_sigma2_e)
      : FitError(what), best_sigma2_u_(best_sigma2_u), best_sigma2_e_(best_sigma2_e) {}
  double best_sigma2_u() const noexcept { return best_sigma2_u_; }
  double best_sigma2_e() const noexcept { return best_sigma2_e_; }

 private:
  double best_sigma2_u_;
  double best_sigma2_e_;
};

// A resampling pool has zero second moment and cannot be rescaled.
class DegeneratePoolError : public Error {
 public:
  DegeneratePoolError(const std::string& pool, const std::string& detail)
      : Error("degenerate " + pool + " pool: " + detail), pool_(pool) {}
  const std::string& pool() const noexcept { return pool_; }

 private:
  std::string pool_;
};

class BootstrapError : public Error {
 public:
  using Error::Error;
};

}  // namespace mixedboot
