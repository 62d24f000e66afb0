#pragma once

#include <stdexcept>
#include <string>

namespace sdfn {

// Base for every error raised by the library. CLI exit codes are derived from
// the concrete subtype.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericsError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

class VocabError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

class CheckpointMissing : public Error {
 public:
  using Error::Error;
};

}  // namespace sdfn
