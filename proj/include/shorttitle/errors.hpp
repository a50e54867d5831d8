#pragma once

#include <stdexcept>
#include <string>

namespace shorttitle {

// Malformed input files (bad JSON, truncated checkpoints, bad lexicon lines).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input that violates a contract (label/word count mismatch,
// empty title, out-of-range configuration).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Version or hash mismatch when loading a checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace shorttitle
