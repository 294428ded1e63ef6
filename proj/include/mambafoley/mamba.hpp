#pragma once

// Selective-SSM layer with input-dependent step, input and readout
// projections, and the bidirectional bottleneck built from two of them.

#include <cmath>
#include <stdexcept>
#include <string>

#include "mambafoley/init.hpp"
#include "mambafoley/ops.hpp"

namespace mambafoley {

inline constexpr Index kMambaStateDim = 16;
inline constexpr Index kMambaExpansion = 4;
inline constexpr Index kMambaConvWidth = 4;

template <typename Scalar>
struct MambaLayerWeights {
  Matrix<Scalar> in_proj;     // [model_dim x 2*expanded]
  Matrix<Scalar> conv_weight; // [conv_width x expanded]
  Matrix<Scalar> conv_bias;   // [1 x expanded]
  Matrix<Scalar> delta_proj;  // [expanded x expanded]
  Matrix<Scalar> delta_bias;  // [1 x expanded]
  Matrix<Scalar> B_proj;      // [expanded x state_dim]
  Matrix<Scalar> C_proj;      // [expanded x state_dim]
  Matrix<Scalar> A_log;       // [expanded x state_dim], log(-A)
  Matrix<Scalar> out_proj;    // [expanded x model_dim]

  Index model_dim() const { return in_proj.rows(); }
  Index expanded_dim() const { return out_proj.rows(); }

  static MambaLayerWeights init(Index model_dim, Rng& rng) {
    const Index E = kMambaExpansion * model_dim;
    MambaLayerWeights w;
    w.in_proj = fan_in_uniform<Scalar>(model_dim, model_dim, 2 * E, rng);
    w.conv_weight = fan_in_uniform<Scalar>(kMambaConvWidth, kMambaConvWidth, E, rng);
    w.conv_bias = Matrix<Scalar>::Zero(1, E);
    w.delta_proj = fan_in_uniform<Scalar>(E, E, E, rng, 0.1);
    // softplus(bias) log-uniform in [1e-3, 1e-1]
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
    w.delta_bias.resize(1, E);
    for (Index e = 0; e < E; ++e) {
      const double dt = std::exp(log_dt(rng));
      w.delta_bias(0, e) = static_cast<Scalar>(dt + std::log(-std::expm1(-dt)));
    }
    w.B_proj = fan_in_uniform<Scalar>(E, E, kMambaStateDim, rng);
    w.C_proj = fan_in_uniform<Scalar>(E, E, kMambaStateDim, rng);
    w.A_log.resize(E, kMambaStateDim);
    for (Index d = 0; d < kMambaStateDim; ++d) {
      w.A_log.col(d).setConstant(static_cast<Scalar>(std::log(static_cast<double>(d + 1))));
    }
    w.out_proj = fan_in_uniform<Scalar>(E, E, model_dim, rng);
    return w;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_fields(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_fields(*this, prefix, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& w, const std::string& p, F& f) {
    f(p + "in_proj", w.in_proj);
    f(p + "conv_weight", w.conv_weight);
    f(p + "conv_bias", w.conv_bias);
    f(p + "delta_proj", w.delta_proj);
    f(p + "delta_bias", w.delta_bias);
    f(p + "B_proj", w.B_proj);
    f(p + "C_proj", w.C_proj);
    f(p + "A_log", w.A_log);
    f(p + "out_proj", w.out_proj);
  }
};

template <typename Scalar>
struct BidirectionalBottleneckWeights {
  MambaLayerWeights<Scalar> forward_branch;
  MambaLayerWeights<Scalar> backward_branch;
  Matrix<Scalar> fwd_norm_gain;  // [1 x C]
  Matrix<Scalar> bwd_norm_gain;  // [1 x C]
  Matrix<Scalar> merge_weight;   // [2C x C]; rows 0..C-1 read the forward half
  Matrix<Scalar> merge_bias;     // [1 x C]

  Index model_dim() const { return merge_weight.cols(); }

  static BidirectionalBottleneckWeights init(Index model_dim, Rng& rng) {
    BidirectionalBottleneckWeights w;
    w.forward_branch = MambaLayerWeights<Scalar>::init(model_dim, rng);
    w.backward_branch = MambaLayerWeights<Scalar>::init(model_dim, rng);
    w.fwd_norm_gain = Matrix<Scalar>::Ones(1, model_dim);
    w.bwd_norm_gain = Matrix<Scalar>::Ones(1, model_dim);
    w.merge_weight = fan_in_uniform<Scalar>(2 * model_dim, 2 * model_dim, model_dim, rng);
    w.merge_bias = Matrix<Scalar>::Zero(1, model_dim);
    return w;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_fields(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_fields(*this, prefix, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& w, const std::string& p, F& f) {
    w.forward_branch.visit(p + "forward.", f);
    w.backward_branch.visit(p + "backward.", f);
    f(p + "fwd_norm_gain", w.fwd_norm_gain);
    f(p + "bwd_norm_gain", w.bwd_norm_gain);
    f(p + "merge_weight", w.merge_weight);
    f(p + "merge_bias", w.merge_bias);
  }
};

template <typename Scalar>
Var<Scalar> mamba_layer(const MambaLayerWeights<Scalar>& w, Var<Scalar> x) {
  if (x.cols() != w.model_dim()) throw std::invalid_argument("mamba_layer: model_dim mismatch");
  auto& tape = *x.tape;
  const Index E = w.expanded_dim();

  auto projected = matmul(x, tape.parameter(w.in_proj));
  auto stream = slice_cols(projected, 0, E);
  auto gate = slice_cols(projected, E, E);

  stream = silu(depthwise_causal_conv(stream, tape.parameter(w.conv_weight), tape.parameter(w.conv_bias)));
  auto delta = softplus(linear(stream, tape.parameter(w.delta_proj), tape.parameter(w.delta_bias)));
  auto B = matmul(stream, tape.parameter(w.B_proj));
  auto C = matmul(stream, tape.parameter(w.C_proj));
  auto A = scale(exp(tape.parameter(w.A_log)), Scalar(-1));

  auto y = selective_scan(stream, delta, A, B, C);
  y = cwise_product(y, silu(gate));
  return matmul(y, tape.parameter(w.out_proj));
}

template <typename Scalar>
Var<Scalar> bidirectional_bottleneck(const BidirectionalBottleneckWeights<Scalar>& w, Var<Scalar> f_in) {
  auto& tape = *f_in.tape;
  auto y_f = f_in + rms_norm(mamba_layer(w.forward_branch, f_in), tape.parameter(w.fwd_norm_gain));
  auto rev = reverse_rows(f_in);
  auto y_b = reverse_rows(rev + rms_norm(mamba_layer(w.backward_branch, rev), tape.parameter(w.bwd_norm_gain)));
  return linear(concat_cols(y_f, y_b), tape.parameter(w.merge_weight), tape.parameter(w.merge_bias));
}

// Value-level entry points.

template <typename Scalar>
Matrix<Scalar> rms_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, Scalar eps = Scalar(1e-8)) {
  Tape<Scalar> tape;
  return rms_norm(tape.constant(x), tape.constant(gain), eps).value();
}

template <typename Scalar>
Matrix<Scalar> mamba_layer_forward(const MambaLayerWeights<Scalar>& w, const Matrix<Scalar>& x) {
  if (x.rows() == 0) return Matrix<Scalar>(0, w.model_dim());
  Tape<Scalar> tape;
  return mamba_layer(w, tape.constant(x)).value();
}

template <typename Scalar>
Matrix<Scalar> bidirectional_bottleneck_forward(const BidirectionalBottleneckWeights<Scalar>& w,
                                                const Matrix<Scalar>& f_in) {
  if (f_in.rows() == 0) throw std::invalid_argument("bidirectional_bottleneck_forward: empty input");
  Tape<Scalar> tape;
  return bidirectional_bottleneck(w, tape.constant(f_in)).value();
}

}  // namespace mambafoley
