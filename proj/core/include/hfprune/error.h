#pragma once

#include <stdexcept>
#include <string>

namespace hfprune {

enum class ErrorKind {
  kFormat,      // malformed or unreadable input file
  kShape,       // dimension / vocabulary mismatch
  kNumeric,     // non-finite values where finite ones are required
  kRange,       // index or parameter out of its valid range
  kInfeasible,  // requested prune ratio cannot be met
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kFormat, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class RangeError : public Error {
 public:
  explicit RangeError(const std::string& what) : Error(ErrorKind::kRange, what) {}
};

class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what) : Error(ErrorKind::kInfeasible, what) {}
};

}  // namespace hfprune
