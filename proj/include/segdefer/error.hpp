#pragma once

#include <stdexcept>
#include <string>

namespace segdefer {

/// Shapes of two or more maps that must agree do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A metric whose denominator or class balance makes it undefined
/// (single-class AUC, ERR with zero baseline error, ...).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Internal consistency check failed; indicates a bug or corrupted input
/// that passed validation.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class ArrayFileErrc {
  io,
  malformed_header,
  unsupported_dtype,
  shape_mismatch,
  non_finite,
  out_of_range,
};

const char* to_string(ArrayFileErrc code);

class ArrayFileError : public std::runtime_error {
 public:
  ArrayFileError(ArrayFileErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ArrayFileErrc code() const noexcept { return code_; }

 private:
  ArrayFileErrc code_;
};

}  // namespace segdefer
