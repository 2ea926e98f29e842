#pragma once

#include <stdexcept>
#include <string>

namespace regerr {

// Base class for all recoverable errors raised by the library. The CLI maps
// subclasses onto exit codes (config vs data errors), so new error types
// should derive from one of the two intermediate categories below.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration, bad arguments, contract violations.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Bad or missing data, I/O failures.
class DataError : public Error {
  public:
    using Error::Error;
};

class FileMissing : public DataError {
  public:
    using DataError::DataError;
};
class FormatError : public DataError {
  public:
    using DataError::DataError;
};
class UnsupportedFormat : public DataError {
  public:
    using DataError::DataError;
};
class DuplicateId : public DataError {
  public:
    using DataError::DataError;
};
class DegenerateVolume : public DataError {
  public:
    using DataError::DataError;
};
class NoOverlap : public DataError {
  public:
    using DataError::DataError;
};
class GeometryMismatch : public DataError {
  public:
    using DataError::DataError;
};
class CoverageError : public DataError {
  public:
    using DataError::DataError;
};
class DomainError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};
class EmptyPairs : public DataError {
  public:
    using DataError::DataError;
};
class OutOfExtent : public DataError {
  public:
    using DataError::DataError;
};
class TooFewPatients : public ConfigError {
  public:
    using ConfigError::ConfigError;
};
class ShapeError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};
class KeyMismatch : public DataError {
  public:
    using DataError::DataError;
};
class ShapeMismatch : public DataError {
  public:
    using DataError::DataError;
};
class EmptySplit : public DataError {
  public:
    using DataError::DataError;
};
class NonFiniteLoss : public DataError {
  public:
    using DataError::DataError;
};
class IoError : public DataError {
  public:
    using DataError::DataError;
};
class VersionMismatch : public DataError {
  public:
    using DataError::DataError;
};

} // namespace regerr
