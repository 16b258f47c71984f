#pragma once

#include <stdexcept>
#include <string>

namespace casciff {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration value or invalid argument combination.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input data; carries the 1-based line number when known.
struct ParseError : Error {
  ParseError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
  std::size_t line = 0;
};

// Semantically invalid data (violated cascade/graph invariants).
struct DataError : Error {
  using Error::Error;
};

// Tensor shape mismatch; message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite values, divergence, failed numeric checks.
struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Mismatched config hashes, stale caches, incompatible checkpoints.
struct ConsistencyError : Error {
  using Error::Error;
};

}  // namespace casciff
