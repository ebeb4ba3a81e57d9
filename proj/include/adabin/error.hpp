#pragma once

#include <stdexcept>
#include <string>

namespace adabin {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched or invalid tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (datasets, checkpoints, bundles).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace adabin
