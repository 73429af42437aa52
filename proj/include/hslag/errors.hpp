#pragma once

#include <stdexcept>
#include <string>

namespace hslag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two fields (or a field and an operator) live on different grids.
class GridMismatch : public Error {
 public:
  explicit GridMismatch(const std::string& what) : Error("grid mismatch: " + what) {}
};

/// A point left the domain on which a metric or chart is defined.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain violation: " + what) {}
};

/// Degenerate geometric data (rank-deficient Jacobian, singular metric, ...).
class DegenerateGeometry : public Error {
 public:
  explicit DegenerateGeometry(const std::string& what) : Error("degenerate geometry: " + what) {}
};

/// Input outside the supported model family.
class Unsupported : public Error {
 public:
  explicit Unsupported(const std::string& what) : Error("unsupported: " + what) {}
};

/// An iterative or numerical procedure failed its own consistency check.
class NumericalFailure : public Error {
 public:
  explicit NumericalFailure(const std::string& what) : Error("numerical failure: " + what) {}
};

}  // namespace hslag
