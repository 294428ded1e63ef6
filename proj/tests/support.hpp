#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "mambafoley/init.hpp"
#include "mambafoley/ssm.hpp"
#include "mambafoley/tape.hpp"

namespace mambafoley::testing {

/// Forward-mode number: value and directional derivative.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  Dual(double value, double deriv) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }

  friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
  }
  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
  friend bool operator==(const Dual& a, const Dual& b) { return a.v == b.v; }
  friend bool operator!=(const Dual& a, const Dual& b) { return a.v != b.v; }

  friend Dual exp(const Dual& a) {
    const double e = std::exp(a.v);
    return {e, e * a.d};
  }
  friend Dual expm1(const Dual& a) { return {std::expm1(a.v), std::exp(a.v) * a.d}; }
  friend Dual abs(const Dual& a) { return a.v < 0 ? -a : a; }
};

inline double norm_rel_error(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& expected, double floor = 1e-12) {
  return (actual - expected).norm() / std::max(expected.norm(), floor);
}

inline Eigen::MatrixXd random_matrix(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

/// Random selective-scan instance with stable A and positive delta.
inline SelectiveScanInputs<double> random_scan(Index T, Index E, Index D, Rng& rng) {
  SelectiveScanInputs<double> in;
  in.u = random_matrix(T, E, rng);
  in.delta = random_matrix(T, E, rng, 0.01, 0.5);
  in.A = -random_matrix(E, D, rng, 0.1, 2.0);
  in.B = random_matrix(T, D, rng);
  in.C = random_matrix(T, D, rng);
  return in;
}

/// Central differences of f with respect to every entry of m (m is perturbed in place and restored).
inline Eigen::MatrixXd finite_difference(const std::function<double()>& f, Eigen::MatrixXd& m, double step = 1e-4) {
  Eigen::MatrixXd grad(m.rows(), m.cols());
  for (Index i = 0; i < m.size(); ++i) {
    const double saved = m.data()[i];
    m.data()[i] = saved + step;
    const double up = f();
    m.data()[i] = saved - step;
    const double down = f();
    m.data()[i] = saved;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace mambafoley::testing

namespace Eigen {
template <>
struct NumTraits<mambafoley::testing::Dual> : NumTraits<double> {
  using Real = mambafoley::testing::Dual;
  using NonInteger = mambafoley::testing::Dual;
  using Nested = mambafoley::testing::Dual;
  enum { IsComplex = 0, IsInteger = 0, IsSigned = 1, RequireInitialization = 1, ReadCost = 1, AddCost = 3, MulCost = 3 };
};
}  // namespace Eigen
