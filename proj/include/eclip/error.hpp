#pragma once

#include <stdexcept>
#include <string>

namespace eclip {

// Input violates a documented precondition (bad config value, out-of-range id, ...).
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Tensor dimensions do not fit the operation.
class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

// On-disk data (dataset, checkpoint) is malformed or truncated.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace eclip
