#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oodlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible operand shapes for a primitive.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Bad argument or inconsistent object (labels out of range, spec violations).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation's precondition (non-scalar backward root, off-simplex weights).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced during an iterative procedure.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A state invariant was observed broken after the fact.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A pipeline stage failed or its persisted output is unusable.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(stage) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace oodlab
