#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "lingedit/errors.hpp"

namespace lingedit {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Feature maps are stored as a (channels x batch*height*width) column-major
// matrix. Column b*H*W + y*W + x holds the channel vector of pixel (y, x) of
// sample b, so one sample is a contiguous block of columns and one location
// is a contiguous run of channels.
struct Shape {
  Index batch = 1;
  Index channels = 0;
  Index height = 1;
  Index width = 1;

  Index spatial() const { return height * width; }
  Index columns() const { return batch * height * width; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "[" + std::to_string(batch) + "," + std::to_string(channels) + "," +
           std::to_string(height) + "," + std::to_string(width) + "]";
  }
};

inline Shape matrix_shape(Index rows, Index cols) { return Shape{1, rows, 1, cols}; }

template <typename Scalar>
bool all_finite(const Matrix<Scalar>& m) {
  return m.allFinite();
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ShapeError(message);
}

}  // namespace lingedit
