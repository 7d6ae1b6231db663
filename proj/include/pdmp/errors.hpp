#pragma once

#include <stdexcept>
#include <string>

namespace pdmp {

/// Bad configuration or mismatched pipeline inputs. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A persisted artifact does not belong to the active configuration
/// (different model, horizon, grid size or config hash). CLI exit code 3.
class ArtifactMismatchError : public ConfigError {
 public:
  explicit ArtifactMismatchError(const std::string& what) : ConfigError(what) {}
};

/// Non-finite values or a diverging numerical routine. CLI exit code 4.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem failures (unwritable directory, truncated file).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pdmp
