#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latro {

// Small geometric vectors/matrices (d <= 3) live on the stack.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

using Eigen::MatrixXd;
using Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. xi > 1).
class DomainError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// det(F) <= 0 somewhere. Recoverable: the line search backtracks on it.
class InvertedElementError : public Error {
 public:
  explicit InvertedElementError(const std::string& what, int cell = -1)
      : Error(what), cell_(cell) {}
  int cell() const { return cell_; }

 private:
  int cell_;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

/// A principal remaining block K_rr failed the definiteness test.
class NeedsEnrichment : public SolverError {
 public:
  NeedsEnrichment(const std::string& what, std::vector<int> cells)
      : SolverError(what), cells_(std::move(cells)) {}
  const std::vector<int>& cells() const { return cells_; }

 private:
  std::vector<int> cells_;
};

class EnrichmentExhausted : public Error {
 public:
  using Error::Error;
};

class DegenerateBasisError : public Error {
 public:
  using Error::Error;
};

class NonConvergenceError : public SolverError {
 public:
  using SolverError::SolverError;
};

class StepFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace latro
