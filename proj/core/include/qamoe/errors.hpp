#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qamoe {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller (bad dimensions, out-of-range values).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// The finite-difference oracle evaluated a non-finite function value.
class OracleFailure : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file. offset() is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class VersionError : public Error {
 public:
  VersionError(const std::string& kind, unsigned found, unsigned supported)
      : Error(kind + " file version " + std::to_string(found) +
              " is not supported (this build reads version " +
              std::to_string(supported) + ")"),
        found_(found),
        supported_(supported) {}
  unsigned found() const noexcept { return found_; }
  unsigned supported() const noexcept { return supported_; }

 private:
  unsigned found_;
  unsigned supported_;
};

// Non-finite gradients or parameters during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A metric has no defined value on the given inputs (zero variance, no
// nonzero labels, ...).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

}  // namespace qamoe
