#pragma once

#include <stdexcept>
#include <string>

namespace nfsm {

// Base of every error raised by the library. kind() is the stable,
// machine-parsable category used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};
struct ArgumentError : Error {
  explicit ArgumentError(const std::string& w) : Error("argument", w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};
struct FileError : Error {
  explicit FileError(const std::string& w) : Error("file", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

}  // namespace nfsm
