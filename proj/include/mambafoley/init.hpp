#pragma once

#include <cmath>
#include <random>

#include "mambafoley/types.hpp"

namespace mambafoley {

using Rng = std::mt19937_64;

/// Uniform(-bound, bound) entries. Draws are made in double so float and
/// double models built from the same seed agree up to rounding.
template <typename Scalar>
Matrix<Scalar> uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  }
  return m;
}

template <typename Scalar>
Matrix<Scalar> normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  }
  return m;
}

/// Fan-in scaled uniform init with unit-variance preservation for linear maps.
template <typename Scalar>
Matrix<Scalar> fan_in_uniform(Index fan_in, Index rows, Index cols, Rng& rng, double gain = 1.0) {
  return uniform_matrix<Scalar>(rows, cols, gain * std::sqrt(3.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace mambafoley
