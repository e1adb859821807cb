#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epilnet {

/// Raised when a tensor or parameter does not have the shape an operation needs.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string what_dim, std::size_t expected, std::size_t actual)
      : std::invalid_argument(what_dim + ": expected " + std::to_string(expected) +
                              ", got " + std::to_string(actual)),
        dimension_(std::move(what_dim)),
        expected_(expected),
        actual_(actual) {}

  const std::string& dimension() const noexcept { return dimension_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string dimension_;
  std::size_t expected_;
  std::size_t actual_;
};

/// Batch-norm training statistics need at least two elements per channel.
class DegenerateVarianceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf loss, empty split, class-count mismatch.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace epilnet
