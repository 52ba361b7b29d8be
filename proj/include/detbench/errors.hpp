#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace detbench {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed document text. `offset` is the byte position reported by the reader.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A required member is missing or has the wrong type.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::string field)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Dangling references, checksum mismatches, gaps in a series.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::vector<std::int64_t> ids = {})
      : Error(what), ids_(std::move(ids)) {}
  const std::vector<std::int64_t>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::int64_t> ids_;
};

// Input outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A metric with no defined value (e.g. mAP over zero scored classes).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// k < 3: the train/val/test rotation needs three distinct folds.
class ProtocolError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class InfeasiblePlanError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace detbench
