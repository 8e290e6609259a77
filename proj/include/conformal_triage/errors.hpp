#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace conformal_triage {

/// Broad failure category. The CLI maps these onto its exit codes.
enum class ErrorKind { validation, io, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class InvariantError : public Error {
 public:
  InvariantError(const std::string& id, const std::string& what);
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class NonpositiveResidual : public Error {
 public:
  explicit NonpositiveResidual(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class MissingPrediction : public Error {
 public:
  explicit MissingPrediction(const std::string& id)
      : Error(ErrorKind::validation, "no prediction for profile '" + id + "'") {}
};

class EmptyScores : public Error {
 public:
  explicit EmptyScores(const std::string& what = "score multiset is empty")
      : Error(ErrorKind::validation, what) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class NumericalDivergence : public Error {
 public:
  explicit NumericalDivergence(std::size_t epoch);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class InsufficientReplicates : public Error {
 public:
  explicit InsufficientReplicates(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class BudgetExceedsPool : public Error {
 public:
  BudgetExceedsPool(std::size_t budget, std::size_t pool);
};

class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(const std::string& what) : Error(ErrorKind::validation, what) {}
};

}  // namespace conformal_triage
