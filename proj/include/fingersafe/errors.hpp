#pragma once

#include <stdexcept>
#include <string>

namespace fingersafe {

// Bad parameters: even kernel sizes, non-positive sigma, unknown config keys.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// A caller broke a documented precondition (shape/layout mismatch, empty gallery...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

class ShapeError : public ContractError {
 public:
  explicit ShapeError(const std::string& what) : ContractError(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class SegmentationError : public std::runtime_error {
 public:
  explicit SegmentationError(const std::string& what) : std::runtime_error(what) {}
};

// Raised by the protection loop when a loss stops being finite.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fingersafe
