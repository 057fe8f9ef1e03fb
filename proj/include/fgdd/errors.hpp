#pragma once

#include <stdexcept>
#include <string>

namespace fgdd {

// Base class for all library errors.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Quadrature did not converge under node doubling.
class quadrature_error : public error {
 public:
  using error::error;
};

// Self-consistent solver failed to certify a solution.
class solver_error : public error {
 public:
  solver_error(const std::string& what, double last_residual)
      : error(what), last_residual(last_residual) {}
  double last_residual;
};

// Parameter combination where a closed form degenerates (0/0 or a
// vanishing shared denominator).
class degenerate_error : public error {
 public:
  using error::error;
};

// Invalid user input (shapes, grids, missing table entries).
class invalid_argument : public error {
 public:
  using error::error;
};

}  // namespace fgdd
