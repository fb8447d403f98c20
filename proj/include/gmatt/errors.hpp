#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gmatt {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input data (malformed SMILES, corpus lines, files). CLI exit code 2.
struct DataError : Error {
  using Error::Error;
};

// Internal/runtime failures (shape mismatches, non-finite numbers). CLI exit code 3.
struct RuntimeError : Error {
  using Error::Error;
};

struct UnknownCharacterError : DataError {
  explicit UnknownCharacterError(std::size_t pos)
      : DataError("unknown character at position " + std::to_string(pos)), position(pos) {}
  std::size_t position;
};

struct ParseError : DataError {
  explicit ParseError(std::size_t pos)
      : DataError("not in grammar: no derivation past position " + std::to_string(pos)),
        position(pos) {}
  std::size_t position;
};

struct DepthExceededError : DataError {
  DepthExceededError(int depth, int limit)
      : DataError("tree depth " + std::to_string(depth) + " exceeds path length L=" +
                  std::to_string(limit)) {}
};

struct MalformedLineError : DataError {
  explicit MalformedLineError(int line, const std::string& why)
      : DataError("line " + std::to_string(line) + ": " + why), line_no(line) {}
  int line_no;
};

struct BadClassError : DataError {
  explicit BadClassError(int line)
      : DataError("line " + std::to_string(line) + ": reaction class must be in 1..10"),
        line_no(line) {}
  int line_no;
};

struct MissingClassError : DataError {
  MissingClassError() : DataError("model was trained with reaction classes; --class required") {}
};

struct LengthExceededError : DataError {
  using DataError::DataError;
};

struct LengthMismatchError : DataError {
  using DataError::DataError;
};

struct CorruptCheckpointError : DataError {
  using DataError::DataError;
};

struct ConfigMismatchError : DataError {
  using DataError::DataError;
};

struct ShapeMismatchError : RuntimeError {
  using RuntimeError::RuntimeError;
};

struct IndexOutOfRangeError : RuntimeError {
  using RuntimeError::RuntimeError;
};

struct EmptyBatchError : RuntimeError {
  EmptyBatchError() : RuntimeError("all positions are padding") {}
};

struct NonFiniteError : RuntimeError {
  using RuntimeError::RuntimeError;
};

}  // namespace gmatt
