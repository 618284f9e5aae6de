#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bridge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layer shapes do not compose, or an input does not match the layer it feeds.
class ShapeError : public Error {
 public:
  ShapeError(std::size_t layer, const std::string& what)
      : Error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// A non-finite value where a finite one is required. layer() is npos when
/// the value is not tied to a network layer.
class NumericError : public Error {
 public:
  NumericError(std::size_t layer, const std::string& what)
      : Error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  explicit NumericError(const std::string& what) : Error(what), layer_(std::string::npos) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or mismatched file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in a state that does not permit it.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace bridge
