#pragma once

// Differentiable operations on Tape variables. Feature maps are [T x C].

#include <cmath>
#include <stdexcept>
#include <string>

#include "mambafoley/ssm.hpp"
#include "mambafoley/tape.hpp"

namespace mambafoley {

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  return Scalar(1) / (Scalar(1) + exp(-x));
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  // log(1 + e^x) without overflow
  return x > Scalar(20) ? x : log1p(exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto* tape = a.tape;
  return tape->record(a.value() + b.value(), {a, b}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(a, g);
    tape->accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto* tape = a.tape;
  return tape->record(a.value() - b.value(), {a, b}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(a, g);
    tape->accumulate(b, -g);
  });
}

template <typename Scalar>
Var<Scalar> cwise_product(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "cwise_product: shape mismatch");
  auto* tape = a.tape;
  return tape->record(a.value().cwiseProduct(b.value()), {a, b}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(a, g.cwiseProduct(b.value()));
    tape->accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  auto* tape = a.tape;
  return tape->record(a.value() * s, {a}, [=](const Matrix<Scalar>& g) { tape->accumulate(a, g * s); });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar s) {
  auto* tape = a.tape;
  Matrix<Scalar> out = a.value().array() + s;
  return tape->record(std::move(out), {a}, [=](const Matrix<Scalar>& g) { tape->accumulate(a, g); });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> a) {
  auto* tape = a.tape;
  Matrix<Scalar> out = a.value().array().exp();
  const int self = static_cast<int>(tape->size());
  return tape->record(std::move(out), {a}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(a, g.cwiseProduct(tape->value(self)));
  });
}

template <typename Scalar>
Var<Scalar> silu(Var<Scalar> a) {
  auto* tape = a.tape;
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return x * detail::sigmoid(x); });
  return tape->record(std::move(out), {a}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> d = a.value().unaryExpr([](Scalar x) {
      const Scalar s = detail::sigmoid(x);
      return s * (Scalar(1) + x * (Scalar(1) - s));
    });
    tape->accumulate(a, g.cwiseProduct(d));
  });
}

template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> a) {
  auto* tape = a.tape;
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return detail::softplus(x); });
  return tape->record(std::move(out), {a}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(a, g.cwiseProduct(a.value().unaryExpr([](Scalar x) { return detail::sigmoid(x); })));
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and broadcasting

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  auto* tape = a.tape;
  Matrix<Scalar> out = a.value() * b.value();
  return tape->record(std::move(out), {a, b}, [=](const Matrix<Scalar>& g) {
    if (tape->requires_grad(a)) tape->accumulate(a, g * b.value().transpose());
    if (tape->requires_grad(b)) tape->accumulate(b, a.value().transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  auto* tape = a.tape;
  return tape->record(a.value().transpose(), {a},
                      [=](const Matrix<Scalar>& g) { tape->accumulate(a, g.transpose()); });
}

/// x + row, with a [1 x C] row broadcast over time.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> x, Var<Scalar> row) {
  detail::require(row.rows() == 1 && row.cols() == x.cols(), "add_row: shape mismatch");
  auto* tape = x.tape;
  Matrix<Scalar> out = x.value().rowwise() + row.value().row(0);
  return tape->record(std::move(out), {x, row}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(x, g);
    tape->accumulate(row, g.colwise().sum());
  });
}

/// x * row, with a [1 x C] row broadcast over time.
template <typename Scalar>
Var<Scalar> mul_row(Var<Scalar> x, Var<Scalar> row) {
  detail::require(row.rows() == 1 && row.cols() == x.cols(), "mul_row: shape mismatch");
  auto* tape = x.tape;
  Matrix<Scalar> out = x.value().array().rowwise() * row.value().row(0).array();
  return tape->record(std::move(out), {x, row}, [=](const Matrix<Scalar>& g) {
    if (tape->requires_grad(x)) {
      tape->accumulate(x, (g.array().rowwise() * row.value().row(0).array()).matrix());
    }
    if (tape->requires_grad(row)) tape->accumulate(row, g.cwiseProduct(x.value()).colwise().sum());
  });
}

/// x W + b for x [T x in], W [in x out], b [1 x out].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  auto* tape = a.tape;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return tape->record(std::move(out), {a}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(a, Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

/// Mean squared difference over all entries, as a 1x1 value.
template <typename Scalar>
Var<Scalar> mse(Var<Scalar> prediction, Var<Scalar> target) {
  detail::require(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
                  "mse: shape mismatch");
  auto* tape = prediction.tape;
  const Scalar n = static_cast<Scalar>(prediction.value().size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = (prediction.value() - target.value()).squaredNorm() / n;
  return tape->record(std::move(out), {prediction, target}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> d = (prediction.value() - target.value()) * (Scalar(2) * g(0, 0) / n);
    tape->accumulate(prediction, d);
    tape->accumulate(target, -d);
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows(), "concat_cols: row mismatch");
  auto* tape = a.tape;
  Matrix<Scalar> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ca = a.cols();
  const Index cb = b.cols();
  return tape->record(std::move(out), {a, b}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(a, g.leftCols(ca));
    tape->accumulate(b, g.rightCols(cb));
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> x, Index start, Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: out of range");
  auto* tape = x.tape;
  Matrix<Scalar> out = x.value().middleCols(start, count);
  const Index rows = x.rows();
  const Index cols = x.cols();
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
    full.middleCols(start, count) = g;
    tape->accumulate(x, full);
  });
}

template <typename Scalar>
Var<Scalar> row_at(Var<Scalar> x, Index row) {
  detail::require(row >= 0 && row < x.rows(), "row_at: out of range");
  auto* tape = x.tape;
  Matrix<Scalar> out = x.value().row(row);
  const Index rows = x.rows();
  const Index cols = x.cols();
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
    full.row(row) = g.row(0);
    tape->accumulate(x, full);
  });
}

/// Time reversal (row order).
template <typename Scalar>
Var<Scalar> reverse_rows(Var<Scalar> x) {
  auto* tape = x.tape;
  Matrix<Scalar> out = x.value().colwise().reverse();
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    tape->accumulate(x, g.colwise().reverse());
  });
}

/// [T x C] -> [T/f x f*C]; output row r holds input rows r*f .. r*f+f-1 side by side.
template <typename Scalar>
Var<Scalar> fold_rows(Var<Scalar> x, Index factor) {
  detail::require(factor >= 1 && x.rows() % factor == 0, "fold_rows: factor must divide length");
  auto* tape = x.tape;
  const Index T = x.rows();
  const Index C = x.cols();
  const Index R = T / factor;
  Matrix<Scalar> out(R, factor * C);
  for (Index c = 0; c < C; ++c) {
    for (Index j = 0; j < factor; ++j) {
      out.col(j * C + c) = Eigen::Map<const Vector<Scalar>, 0, Eigen::InnerStride<>>(
          x.value().col(c).data() + j, R, Eigen::InnerStride<>(factor));
    }
  }
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> back(T, C);
    for (Index c = 0; c < C; ++c) {
      for (Index j = 0; j < factor; ++j) {
        Eigen::Map<Vector<Scalar>, 0, Eigen::InnerStride<>>(back.col(c).data() + j, R,
                                                            Eigen::InnerStride<>(factor)) =
            g.col(j * C + c);
      }
    }
    tape->accumulate(x, back);
  });
}

/// Inverse of fold_rows: [R x f*C] -> [R*f x C].
template <typename Scalar>
Var<Scalar> unfold_rows(Var<Scalar> x, Index factor) {
  detail::require(factor >= 1 && x.cols() % factor == 0, "unfold_rows: factor must divide width");
  auto* tape = x.tape;
  const Index R = x.rows();
  const Index C = x.cols() / factor;
  Matrix<Scalar> out(R * factor, C);
  for (Index c = 0; c < C; ++c) {
    for (Index j = 0; j < factor; ++j) {
      Eigen::Map<Vector<Scalar>, 0, Eigen::InnerStride<>>(out.col(c).data() + j, R,
                                                          Eigen::InnerStride<>(factor)) =
          x.value().col(j * C + c);
    }
  }
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> back(R, factor * C);
    for (Index c = 0; c < C; ++c) {
      for (Index j = 0; j < factor; ++j) {
        back.col(j * C + c) = Eigen::Map<const Vector<Scalar>, 0, Eigen::InnerStride<>>(
            g.col(c).data() + j, R, Eigen::InnerStride<>(factor));
      }
    }
    tape->accumulate(x, back);
  });
}

/// Mean over non-overlapping groups of `factor` rows.
template <typename Scalar>
Var<Scalar> avg_pool_rows(Var<Scalar> x, Index factor) {
  detail::require(factor >= 1 && x.rows() % factor == 0, "avg_pool_rows: factor must divide length");
  auto* tape = x.tape;
  const Index R = x.rows() / factor;
  const Index C = x.cols();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(R, C);
  for (Index r = 0; r < R; ++r) out.row(r) = x.value().middleRows(r * factor, factor).colwise().mean();
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> back(R * factor, C);
    for (Index r = 0; r < R; ++r) {
      back.middleRows(r * factor, factor) = (g.row(r) / Scalar(factor)).replicate(factor, 1);
    }
    tape->accumulate(x, back);
  });
}

/// Nearest-neighbour upsampling in time.
template <typename Scalar>
Var<Scalar> repeat_rows(Var<Scalar> x, Index factor) {
  detail::require(factor >= 1, "repeat_rows: factor must be >= 1");
  auto* tape = x.tape;
  const Index R = x.rows();
  const Index C = x.cols();
  Matrix<Scalar> out(R * factor, C);
  for (Index r = 0; r < R; ++r) out.middleRows(r * factor, factor) = x.value().row(r).replicate(factor, 1);
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    Matrix<Scalar> back(R, C);
    for (Index r = 0; r < R; ++r) back.row(r) = g.middleRows(r * factor, factor).colwise().sum();
    tape->accumulate(x, back);
  });
}

// ---------------------------------------------------------------------------
// Convolutions

/// 1-D convolution, stride 1, with zero padding. weight is [K*Cin x Cout];
/// rows k*Cin .. k*Cin+Cin-1 hold tap k. Output length T + pad_left + pad_right - K + 1.
template <typename Scalar>
Var<Scalar> conv1d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, Index kernel, Index pad_left,
                   Index pad_right) {
  const Index T = x.rows();
  const Index cin = x.cols();
  detail::require(kernel >= 1 && weight.rows() == kernel * cin, "conv1d: weight shape mismatch");
  const Index out_len = T + pad_left + pad_right - kernel + 1;
  detail::require(out_len >= 1, "conv1d: input too short");
  auto* tape = x.tape;

  // im2col: column block k holds x[t + k - pad_left]
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(out_len, kernel * cin);
  for (Index k = 0; k < kernel; ++k) {
    const Index shift = k - pad_left;
    const Index begin = std::max<Index>(0, -shift);
    const Index end = std::min(out_len, T - shift);
    if (end > begin) cols.block(begin, k * cin, end - begin, cin) = x.value().middleRows(begin + shift, end - begin);
  }
  auto im2col = tape->constant(std::move(cols));
  Matrix<Scalar> out = im2col.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return tape->record(std::move(out), {x, weight, bias}, [=](const Matrix<Scalar>& g) {
    const auto& cols = im2col.value();
    if (tape->requires_grad(weight)) tape->accumulate(weight, cols.transpose() * g);
    tape->accumulate(bias, g.colwise().sum());
    if (!tape->requires_grad(x)) return;
    Matrix<Scalar> dcols = g * weight.value().transpose();
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(T, cin);
    for (Index k = 0; k < kernel; ++k) {
      const Index shift = k - pad_left;
      const Index begin = std::max<Index>(0, -shift);
      const Index end = std::min(out_len, T - shift);
      if (end > begin) dx.middleRows(begin + shift, end - begin) += dcols.block(begin, k * cin, end - begin, cin);
    }
    tape->accumulate(x, dx);
  });
}

/// Depthwise causal convolution: y[t, c] = b[c] + sum_k w[k, c] x[t - (K-1) + k, c],
/// with zeros before t = 0. weight is [K x C].
template <typename Scalar>
Var<Scalar> depthwise_causal_conv(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  const Index T = x.rows();
  const Index C = x.cols();
  const Index K = weight.rows();
  detail::require(weight.cols() == C && bias.rows() == 1 && bias.cols() == C,
                  "depthwise_causal_conv: shape mismatch");
  auto* tape = x.tape;
  const auto& xv = x.value();
  const auto& wv = weight.value();
  Matrix<Scalar> out = bias.value().replicate(T, 1);
  for (Index k = 0; k < K; ++k) {
    const Index lag = K - 1 - k;
    if (lag >= T) continue;
    out.bottomRows(T - lag) += (xv.topRows(T - lag).array().rowwise() * wv.row(k).array()).matrix();
  }
  return tape->record(std::move(out), {x, weight, bias}, [=](const Matrix<Scalar>& g) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(T, C);
    Matrix<Scalar> dw = Matrix<Scalar>::Zero(K, C);
    for (Index k = 0; k < K; ++k) {
      const Index lag = K - 1 - k;
      if (lag >= T) continue;
      dx.topRows(T - lag) += (g.bottomRows(T - lag).array().rowwise() * wv.row(k).array()).matrix();
      dw.row(k) = g.bottomRows(T - lag).cwiseProduct(xv.topRows(T - lag)).colwise().sum();
    }
    tape->accumulate(x, dx);
    tape->accumulate(weight, dw);
    tape->accumulate(bias, g.colwise().sum());
  });
}

/// Strided convolution with kernel == stride == factor: [T x Cin] -> [T/f x Cout].
/// weight is [f*Cin x Cout].
template <typename Scalar>
Var<Scalar> downsample_conv(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, Index factor) {
  return linear(fold_rows(x, factor), weight, bias);
}

/// Transposed convolution with kernel == stride == factor: [T x Cin] -> [T*f x Cout].
/// weight is [Cin x f*Cout]; bias is [1 x Cout].
template <typename Scalar>
Var<Scalar> upsample_conv(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, Index factor) {
  return add_row(unfold_rows(matmul(x, weight), factor), bias);
}

// ---------------------------------------------------------------------------
// Normalization, attention, scan

/// y = gain * x / sqrt(mean_c(x^2) + eps), per timestep. gain is [1 x C].
template <typename Scalar>
Var<Scalar> rms_norm(Var<Scalar> x, Var<Scalar> gain, Scalar eps = Scalar(1e-8)) {
  detail::require(gain.rows() == 1 && gain.cols() == x.cols(), "rms_norm: gain shape mismatch");
  auto* tape = x.tape;
  const Index C = x.cols();
  Vector<Scalar> inv = (x.value().rowwise().squaredNorm() / Scalar(C)).array().unaryExpr(
      [eps](Scalar m) { using std::sqrt; return Scalar(1) / sqrt(m + eps); });
  Matrix<Scalar> normed = x.value().array().colwise() * inv.array();
  Matrix<Scalar> out = normed.array().rowwise() * gain.value().row(0).array();
  return tape->record(std::move(out), {x, gain}, [=](const Matrix<Scalar>& g) {
    if (tape->requires_grad(gain)) tape->accumulate(gain, g.cwiseProduct(normed).colwise().sum());
    if (tape->requires_grad(x)) {
      // dx = inv * (gn - normed * mean_c(gn * normed)), gn = g * gain
      Matrix<Scalar> gn = g.array().rowwise() * gain.value().row(0).array();
      Vector<Scalar> proj = gn.cwiseProduct(normed).rowwise().sum() / Scalar(C);
      Matrix<Scalar> dx = (gn - (normed.array().colwise() * proj.array()).matrix()).array().colwise() * inv.array();
      tape->accumulate(x, dx);
    }
  });
}

/// Row-wise softmax.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x) {
  auto* tape = x.tape;
  Matrix<Scalar> out = (x.value().colwise() - x.value().rowwise().maxCoeff()).array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  const int self = static_cast<int>(tape->size());
  return tape->record(std::move(out), {x}, [=](const Matrix<Scalar>& g) {
    const auto& p = tape->value(self);
    Vector<Scalar> dot = g.cwiseProduct(p).rowwise().sum();
    tape->accumulate(x, p.cwiseProduct((g.colwise() - dot)));
  });
}

/// Selective scan over u [T x E] with per-step delta [T x E], diagonal A
/// [E x D], and shared B, C [T x D]. Forward uses the chunked scan; the
/// adjoint is selective_scan_backward.
template <typename Scalar>
Var<Scalar> selective_scan(Var<Scalar> u, Var<Scalar> delta, Var<Scalar> A, Var<Scalar> B, Var<Scalar> C) {
  auto* tape = u.tape;
  SelectiveScanInputs<Scalar> in{u.value(), delta.value(), A.value(), B.value(), C.value()};
  Matrix<Scalar> out = selective_scan_parallel(in);
  return tape->record(std::move(out), {u, delta, A, B, C}, [=](const Matrix<Scalar>& g) {
    SelectiveScanInputs<Scalar> fwd{u.value(), delta.value(), A.value(), B.value(), C.value()};
    auto grads = selective_scan_backward(fwd, g);
    tape->accumulate(u, grads.u);
    tape->accumulate(delta, grads.delta);
    tape->accumulate(A, grads.A);
    tape->accumulate(B, grads.B);
    tape->accumulate(C, grads.C);
  });
}

}  // namespace mambafoley
