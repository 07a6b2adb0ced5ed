#pragma once

#include <stdexcept>
#include <string>

namespace vu {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A point or region lies outside the grid it addresses.
class OutOfBounds : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration. `key()` names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace vu
