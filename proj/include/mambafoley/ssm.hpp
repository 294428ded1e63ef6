#pragma once

// State-space kernels: zero-order-hold discretization, the LTI recurrence and
// its convolution kernel, and the time-varying (selective) scan in sequential
// and chunked-associative form together with its adjoint.
//
// All state matrices are diagonal and stored per channel: an [channels x D]
// matrix holds the D diagonal entries of every channel's system.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mambafoley/types.hpp"

namespace mambafoley {

/// |delta * a| below this uses the series limit of the ZOH input gain.
inline constexpr double kZohSeriesThreshold = 1e-6;

/// Default chunk length of the associative scan.
inline constexpr Index kScanChunk = 64;

/// Sequences longer than this are differentiated with segment recomputation
/// instead of storing every hidden state.
inline constexpr Index kFullStorageMaxLength = 8192;
inline constexpr Index kRecomputeSegment = 1024;

/// (exp(delta * a) - 1) / a, the scalar ZOH input gain (so that
/// Bbar = gain * B).
template <typename Scalar>
Scalar zoh_input_gain(Scalar delta, Scalar a) {
  using std::abs;
  using std::expm1;
  const Scalar x = delta * a;
  if (abs(x) < Scalar(kZohSeriesThreshold)) {
    return delta * (Scalar(1) + x / Scalar(2));
  }
  return expm1(x) / a;
}

/// d/da of zoh_input_gain: delta^2 * (x e^x - e^x + 1) / x^2 with x = delta a.
template <typename Scalar>
Scalar zoh_input_gain_grad_a(Scalar delta, Scalar a) {
  using std::abs;
  using std::exp;
  const Scalar x = delta * a;
  Scalar phi;
  if (abs(x) < Scalar(0.1)) {
    // sum_{n>=2} x^(n-2) (n-1)/n!, truncated after n = 9
    phi = Scalar(1.0 / 45360.0);
    phi = phi * x + Scalar(1.0 / 5760.0);
    phi = phi * x + Scalar(1.0 / 840.0);
    phi = phi * x + Scalar(1.0 / 144.0);
    phi = phi * x + Scalar(1.0 / 30.0);
    phi = phi * x + Scalar(1.0 / 8.0);
    phi = phi * x + Scalar(1.0 / 3.0);
    phi = phi * x + Scalar(0.5);
  } else {
    phi = (exp(x) * (x - Scalar(1)) + Scalar(1)) / (x * x);
  }
  return delta * delta * phi;
}

template <typename Scalar>
struct ContinuousSsm {
  Matrix<Scalar> A;  // [channels x D], diagonal entries, strictly negative
  Matrix<Scalar> B;  // [channels x D]
  Matrix<Scalar> C;  // [channels x D]

  Index channels() const { return A.rows(); }
  Index state_dim() const { return A.cols(); }
  bool is_stable() const { return A.size() > 0 && (A.array() < Scalar(0)).all(); }
};

template <typename Scalar>
struct DiscreteLtiSsm {
  Matrix<Scalar> Abar;  // [channels x D]
  Matrix<Scalar> Bbar;  // [channels x D]
  Matrix<Scalar> C;     // [channels x D]

  Index channels() const { return Abar.rows(); }
  Index state_dim() const { return Abar.cols(); }
};

template <typename Scalar>
struct SsmKernelVector {
  Matrix<Scalar> taps;  // [T x channels]

  Index length() const { return taps.rows(); }
};

template <typename Scalar>
DiscreteLtiSsm<Scalar> discretize_zoh(const ContinuousSsm<Scalar>& ssm, Scalar delta) {
  if (!(delta > Scalar(0))) {
    throw std::invalid_argument("discretize_zoh: step size must be positive");
  }
  if (ssm.B.rows() != ssm.A.rows() || ssm.B.cols() != ssm.A.cols() ||
      ssm.C.rows() != ssm.A.rows() || ssm.C.cols() != ssm.A.cols()) {
    throw std::invalid_argument("discretize_zoh: A, B and C must share shape");
  }
  DiscreteLtiSsm<Scalar> out;
  out.Abar = (delta * ssm.A.array()).exp().matrix();
  out.Bbar.resize(ssm.A.rows(), ssm.A.cols());
  for (Index j = 0; j < ssm.A.cols(); ++j) {
    for (Index i = 0; i < ssm.A.rows(); ++i) {
      out.Bbar(i, j) = zoh_input_gain(delta, ssm.A(i, j)) * ssm.B(i, j);
    }
  }
  out.C = ssm.C;
  return out;
}

/// Runs h_t = Abar h_{t-1} + Bbar u_t, y_t = C h_t from a zero state.
/// u is [T x channels].
template <typename Scalar>
Matrix<Scalar> ssm_recurrence(const DiscreteLtiSsm<Scalar>& ssm, const Matrix<Scalar>& u) {
  if (u.size() == 0) return Matrix<Scalar>(u.rows(), u.cols());
  if (u.cols() != ssm.channels()) {
    throw std::invalid_argument("ssm_recurrence: channel count mismatch");
  }
  const Index T = u.rows();
  Matrix<Scalar> y(T, u.cols());
  Vector<Scalar> h(ssm.state_dim());
  for (Index c = 0; c < u.cols(); ++c) {
    h.setZero();
    for (Index t = 0; t < T; ++t) {
      h = ssm.Abar.row(c).transpose().cwiseProduct(h) + ssm.Bbar.row(c).transpose() * u(t, c);
      y(t, c) = ssm.C.row(c).dot(h.transpose());
    }
  }
  return y;
}

template <typename Scalar>
SsmKernelVector<Scalar> ssm_kernel_lti(const DiscreteLtiSsm<Scalar>& ssm, Index length) {
  if (length < 1) throw std::invalid_argument("ssm_kernel_lti: length must be >= 1");
  SsmKernelVector<Scalar> kernel;
  kernel.taps.resize(length, ssm.channels());
  for (Index c = 0; c < ssm.channels(); ++c) {
    RowVector<Scalar> power = ssm.Bbar.row(c);
    for (Index k = 0; k < length; ++k) {
      kernel.taps(k, c) = ssm.C.row(c).dot(power);
      power = power.cwiseProduct(ssm.Abar.row(c));
    }
  }
  return kernel;
}

/// Causal convolution y_t = sum_{k<=t} K[k] u[t-k], per channel.
template <typename Scalar>
Matrix<Scalar> ssm_conv_apply(const SsmKernelVector<Scalar>& kernel, const Matrix<Scalar>& u) {
  if (kernel.taps.rows() != u.rows() || kernel.taps.cols() != u.cols()) {
    throw std::invalid_argument("ssm_conv_apply: kernel and input shapes differ");
  }
  const Index T = u.rows();
  Matrix<Scalar> y = Matrix<Scalar>::Zero(T, u.cols());
  for (Index c = 0; c < u.cols(); ++c) {
    for (Index t = 0; t < T; ++t) {
      const Scalar ut = u(t, c);
      if (ut == Scalar(0)) continue;
      y.col(c).tail(T - t) += ut * kernel.taps.col(c).head(T - t);
    }
  }
  return y;
}

/// Inputs of the selective scan. The input projection B_t and readout C_t
/// are shared by all channels at a timestep; delta_t is per channel.
template <typename Scalar>
struct SelectiveScanInputs {
  Matrix<Scalar> u;      // [T x channels]
  Matrix<Scalar> delta;  // [T x channels], >= 0 (softplus may underflow to 0)
  Matrix<Scalar> A;      // [channels x D], diagonal entries
  Matrix<Scalar> B;      // [T x D]
  Matrix<Scalar> C;      // [T x D]

  Index length() const { return u.rows(); }
  Index channels() const { return u.cols(); }
  Index state_dim() const { return A.cols(); }

  void validate() const {
    const Index T = u.rows();
    if (delta.rows() != T || B.rows() != T || C.rows() != T) {
      throw std::invalid_argument("selective scan: per-timestep arrays differ in length");
    }
    if (delta.cols() != u.cols() || A.rows() != u.cols()) {
      throw std::invalid_argument("selective scan: channel count mismatch");
    }
    if (B.cols() != A.cols() || C.cols() != A.cols()) {
      throw std::invalid_argument("selective scan: state dimension mismatch");
    }
    if (delta.size() > 0 && !(delta.array() >= Scalar(0)).all()) {
      throw std::invalid_argument("selective scan: delta must be non-negative");
    }
  }
};

template <typename Scalar>
Matrix<Scalar> selective_scan_sequential(const SelectiveScanInputs<Scalar>& in) {
  using std::exp;
  in.validate();
  const Index T = in.length();
  const Index D = in.state_dim();
  Matrix<Scalar> y(T, in.channels());
  std::vector<Scalar> h(static_cast<std::size_t>(D));
  for (Index c = 0; c < in.channels(); ++c) {
    std::fill(h.begin(), h.end(), Scalar(0));
    for (Index t = 0; t < T; ++t) {
      const Scalar dt = in.delta(t, c);
      const Scalar ut = in.u(t, c);
      Scalar acc(0);
      for (Index d = 0; d < D; ++d) {
        const Scalar a = in.A(c, d);
        auto& hd = h[static_cast<std::size_t>(d)];
        hd = exp(dt * a) * hd + zoh_input_gain(dt, a) * in.B(t, d) * ut;
        acc += in.C(t, d) * hd;
      }
      y(t, c) = acc;
    }
  }
  return y;
}

namespace detail {

// Inclusive scan of the affine maps h -> a[i] h + b[i] from h = 0. Chunks are
// scanned locally, chunk aggregates are scanned by recursion with the same
// chunk length, then each chunk is offset by its carried-in state. The tree
// shape depends only on (n, chunk), so the result is reproducible.
template <typename Scalar>
void chunked_affine_scan(const Scalar* a, const Scalar* b, Scalar* h, Index n, Index chunk) {
  if (n <= chunk) {
    Scalar state(0);
    for (Index i = 0; i < n; ++i) {
      state = a[i] * state + b[i];
      h[i] = state;
    }
    return;
  }
  const Index num_chunks = (n + chunk - 1) / chunk;
  std::vector<Scalar> prefix_a(static_cast<std::size_t>(n));
  std::vector<Scalar> agg_a(static_cast<std::size_t>(num_chunks));
  std::vector<Scalar> agg_b(static_cast<std::size_t>(num_chunks));
  for (Index k = 0; k < num_chunks; ++k) {
    const Index begin = k * chunk;
    const Index end = std::min(n, begin + chunk);
    Scalar pa(1);
    Scalar state(0);
    for (Index i = begin; i < end; ++i) {
      pa *= a[i];
      state = a[i] * state + b[i];
      prefix_a[static_cast<std::size_t>(i)] = pa;
      h[i] = state;
    }
    agg_a[static_cast<std::size_t>(k)] = pa;
    agg_b[static_cast<std::size_t>(k)] = state;
  }
  std::vector<Scalar> chunk_end(static_cast<std::size_t>(num_chunks));
  chunked_affine_scan(agg_a.data(), agg_b.data(), chunk_end.data(), num_chunks, chunk);
  for (Index k = 1; k < num_chunks; ++k) {
    const Scalar carry = chunk_end[static_cast<std::size_t>(k - 1)];
    const Index begin = k * chunk;
    const Index end = std::min(n, begin + chunk);
    for (Index i = begin; i < end; ++i) {
      h[i] += prefix_a[static_cast<std::size_t>(i)] * carry;
    }
  }
}

}  // namespace detail

/// Same result as selective_scan_sequential, evaluated by composing affine
/// state updates (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2) over chunks.
template <typename Scalar>
Matrix<Scalar> selective_scan_parallel(const SelectiveScanInputs<Scalar>& in,
                                       Index chunk = kScanChunk) {
  using std::exp;
  in.validate();
  if (chunk < 1) throw std::invalid_argument("selective_scan_parallel: chunk must be >= 1");
  const Index T = in.length();
  const Index D = in.state_dim();
  Matrix<Scalar> y(T, in.channels());
  Matrix<Scalar> a(T, D);
  Matrix<Scalar> b(T, D);
  Matrix<Scalar> h(T, D);
  for (Index c = 0; c < in.channels(); ++c) {
    for (Index d = 0; d < D; ++d) {
      const Scalar ad = in.A(c, d);
      for (Index t = 0; t < T; ++t) {
        const Scalar dt = in.delta(t, c);
        a(t, d) = exp(dt * ad);
        b(t, d) = zoh_input_gain(dt, ad) * in.B(t, d) * in.u(t, c);
      }
      detail::chunked_affine_scan(a.col(d).data(), b.col(d).data(), h.col(d).data(), T, chunk);
    }
    y.col(c) = h.cwiseProduct(in.C).rowwise().sum();
  }
  return y;
}

template <typename Scalar>
struct SelectiveScanGradients {
  Matrix<Scalar> u;
  Matrix<Scalar> delta;
  Matrix<Scalar> A;
  Matrix<Scalar> B;
  Matrix<Scalar> C;
};

/// Reverse-mode derivative of selective_scan_sequential. Hidden states are
/// recomputed per channel; sequences longer than kFullStorageMaxLength keep
/// only segment-boundary states and recompute each segment on the way back.
/// `segment` overrides the segment length (0 selects automatically).
template <typename Scalar>
SelectiveScanGradients<Scalar> selective_scan_backward(const SelectiveScanInputs<Scalar>& in,
                                                       const Matrix<Scalar>& dy,
                                                       Index segment = 0) {
  using std::exp;
  in.validate();
  const Index T = in.length();
  const Index E = in.channels();
  const Index D = in.state_dim();
  if (dy.rows() != T || dy.cols() != E) {
    throw std::invalid_argument("selective_scan_backward: cotangent shape mismatch");
  }
  if (segment <= 0) segment = T > kFullStorageMaxLength ? kRecomputeSegment : std::max<Index>(T, 1);

  SelectiveScanGradients<Scalar> g;
  g.u = Matrix<Scalar>::Zero(T, E);
  g.delta = Matrix<Scalar>::Zero(T, E);
  g.A = Matrix<Scalar>::Zero(E, D);
  g.B = Matrix<Scalar>::Zero(T, D);
  g.C = Matrix<Scalar>::Zero(T, D);
  if (T == 0) return g;

  const Index num_segments = (T + segment - 1) / segment;
  // boundary(s, d): state just before segment s starts
  Matrix<Scalar> boundary(num_segments, D);
  Matrix<Scalar> states(segment, D);
  Vector<Scalar> h(D);
  Vector<Scalar> dh(D);

  auto step = [&](Index c, Index t, Vector<Scalar>& state) {
    const Scalar dt = in.delta(t, c);
    for (Index d = 0; d < D; ++d) {
      const Scalar ad = in.A(c, d);
      state(d) = exp(dt * ad) * state(d) + zoh_input_gain(dt, ad) * in.B(t, d) * in.u(t, c);
    }
  };

  for (Index c = 0; c < E; ++c) {
    h.setZero();
    for (Index s = 0; s < num_segments; ++s) {
      boundary.row(s) = h.transpose();
      if (s + 1 == num_segments) break;
      for (Index t = s * segment; t < (s + 1) * segment; ++t) step(c, t, h);
    }

    dh.setZero();
    for (Index s = num_segments - 1; s >= 0; --s) {
      const Index begin = s * segment;
      const Index end = std::min(T, begin + segment);
      h = boundary.row(s).transpose();
      for (Index t = begin; t < end; ++t) {
        step(c, t, h);
        states.row(t - begin) = h.transpose();
      }
      for (Index t = end - 1; t >= begin; --t) {
        const Scalar dt = in.delta(t, c);
        const Scalar ut = in.u(t, c);
        const Scalar dyt = dy(t, c);
        Scalar du(0);
        Scalar ddelta(0);
        for (Index d = 0; d < D; ++d) {
          const Scalar ad = in.A(c, d);
          const Scalar decay = exp(dt * ad);
          const Scalar gain = zoh_input_gain(dt, ad);
          const Scalar h_t = states(t - begin, d);
          const Scalar h_prev = t > begin ? states(t - begin - 1, d) : boundary(s, d);

          dh(d) += in.C(t, d) * dyt;
          g.C(t, d) += dyt * h_t;

          const Scalar d_decay = dh(d) * h_prev;
          const Scalar d_gain = dh(d) * in.B(t, d) * ut;
          du += dh(d) * gain * in.B(t, d);
          g.B(t, d) += dh(d) * gain * ut;
          ddelta += d_decay * ad * decay + d_gain * decay;
          g.A(c, d) += d_decay * dt * decay + d_gain * zoh_input_gain_grad_a(dt, ad);

          dh(d) *= decay;
        }
        g.u(t, c) = du;
        g.delta(t, c) = ddelta;
      }
    }
  }
  return g;
}

}  // namespace mambafoley
