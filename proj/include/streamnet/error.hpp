#pragma once

#include <stdexcept>
#include <string>

namespace streamnet {

/// Base class for every error the library throws. `category()` is stable and
/// machine-parsable; the CLI prints it on stderr as `error[<category>]: ...`.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

/// Tensor or layer dimensions do not line up.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

/// A pooling stage would shrink a spatial side below 2: the network is too
/// deep for the declared input size.
class SpatialCollapseError : public Error {
 public:
  explicit SpatialCollapseError(const std::string& message)
      : Error("spatial-collapse", message) {}
};

/// File could not be opened, read, or written.
class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

/// File content violates its declared format (bad magic, truncated payload,
/// out-of-range field).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

/// Experiment or model configuration is invalid.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

/// A NaN or Inf appeared where only finite values are legal.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

}  // namespace streamnet
