#pragma once

#include <Eigen/Core>

namespace mambafoley {

// Feature maps are laid out [time x channels], column-major, so every
// channel is contiguous in time.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

}  // namespace mambafoley
