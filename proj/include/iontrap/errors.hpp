#pragma once

#include <stdexcept>
#include <string>

namespace iontrap {

/// Root of the toolkit's exception hierarchy. The CLI maps each subclass to a
/// distinct process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (y <= 0, empty input, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed: no minimum, unstable trap, non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A configuration or input file is malformed or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
 public:
  explicit IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace iontrap
