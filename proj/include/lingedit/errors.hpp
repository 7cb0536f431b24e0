#pragma once

#include <stdexcept>
#include <string>

namespace lingedit {

/// Tensor or matrix dimensions do not fit the operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A description that is empty after normalization, or unusable for the request.
class InvalidDescription : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf in a forward pass or a score outside its admissible range.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or malformed files, inconsistent corpora, bad ranking tables.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lingedit
