#pragma once

#include <stdexcept>
#include <string>

namespace msan {

// Caller supplied inconsistent shapes, sizes or options.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Argument values outside an operation's domain (e.g. non-binary labels).
class ValueError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// A kernel produced (or was fed) a NaN/Inf.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or missing files, unmatched datasets.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or command usage.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

} // namespace msan
