#pragma once

// Denoising U-Net: GBlock encoder/decoder with FiLM (class + diffusion time)
// and block-wise FiLM (RMS envelope) injection around a sequence-model
// bottleneck.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambafoley/conditioning.hpp"
#include "mambafoley/init.hpp"
#include "mambafoley/mamba.hpp"
#include "mambafoley/ops.hpp"

namespace mambafoley {

enum class BottleneckKind { MambaBidirectional, Attention };

inline constexpr Index kAttentionHeads = 4;
inline constexpr Index kAttentionHeadDim = 64;
inline constexpr Index kConvWidth = 3;

std::string to_string(BottleneckKind kind);
BottleneckKind parse_bottleneck_kind(const std::string& name);

struct UNetConfig {
  std::vector<Index> stage_channels{32, 64, 128};
  std::vector<Index> stage_factors{4, 4, 4};
  BottleneckKind bottleneck = BottleneckKind::MambaBidirectional;
  Index length = 8192;
  int num_classes = 7;
  Index embed_dim = 128;
  Index envelope_window = kDefaultWindow;
  Index envelope_hop = kDefaultHop;
  double sample_rate = 22050.0;

  Index total_factor() const {
    Index f = 1;
    for (Index s : stage_factors) f *= s;
    return f;
  }
  Index envelope_frames() const { return envelope_frame_count(length, envelope_window, envelope_hop); }

  void validate() const {
    if (stage_channels.empty() || stage_channels.size() != stage_factors.size()) {
      throw std::invalid_argument("UNetConfig: stage_channels and stage_factors must be non-empty and equal length");
    }
    for (Index c : stage_channels) {
      if (c < 1) throw std::invalid_argument("UNetConfig: channel counts must be >= 1");
    }
    for (Index f : stage_factors) {
      if (f < 1) throw std::invalid_argument("UNetConfig: stage factors must be >= 1");
    }
    if (length < 1 || length % total_factor() != 0) {
      throw std::invalid_argument("UNetConfig: product of stage factors must divide the length");
    }
    if (num_classes < 1) throw std::invalid_argument("UNetConfig: num_classes must be >= 1");
    if (embed_dim < 2 || embed_dim % 2 != 0) throw std::invalid_argument("UNetConfig: embed_dim must be even");
    if (length < envelope_window) throw std::invalid_argument("UNetConfig: length shorter than envelope window");
    envelope_frame_count(length, envelope_window, envelope_hop);
  }
};

/// Block count of the envelope modulation at a stage of temporal length T:
/// T / 8, at least 1 and at most the number of envelope frames.
inline Index bfilm_block_count(Index stage_length, Index envelope_frames) {
  return std::clamp<Index>(stage_length / 8, 1, envelope_frames);
}

enum class Direction { Down, Up };

template <typename Scalar>
struct GBlockWeights {
  Direction direction = Direction::Down;
  Index factor = 1;

  Matrix<Scalar> conv1_weight, conv1_bias;
  Matrix<Scalar> film_weight, film_bias;  // cond -> [gamma - 1 | beta]
  Matrix<Scalar> conv2_weight, conv2_bias;
  BfilmWeights<Scalar> bfilm;
  Matrix<Scalar> resample_weight, resample_bias;
  Matrix<Scalar> residual_weight, residual_bias;

  Index in_channels() const { return residual_weight.rows(); }
  Index out_channels() const { return residual_weight.cols(); }

  static GBlockWeights init(Direction direction, Index factor, Index cin, Index cout, Index embed_dim, Rng& rng) {
    GBlockWeights w;
    w.direction = direction;
    w.factor = factor;
    w.conv1_weight = fan_in_uniform<Scalar>(kConvWidth * cin, kConvWidth * cin, cout, rng);
    w.conv1_bias = Matrix<Scalar>::Zero(1, cout);
    w.film_weight = fan_in_uniform<Scalar>(embed_dim, embed_dim, 2 * cout, rng, 0.1);
    w.film_bias = Matrix<Scalar>::Zero(1, 2 * cout);
    w.conv2_weight = fan_in_uniform<Scalar>(kConvWidth * cout, kConvWidth * cout, cout, rng);
    w.conv2_bias = Matrix<Scalar>::Zero(1, cout);
    w.bfilm.gamma_proj = uniform_matrix<Scalar>(1, cout, 1.0, rng);
    w.bfilm.beta_proj = uniform_matrix<Scalar>(1, cout, 1.0, rng);
    if (direction == Direction::Down) {
      w.resample_weight = fan_in_uniform<Scalar>(factor * cout, factor * cout, cout, rng);
    } else {
      w.resample_weight = fan_in_uniform<Scalar>(cout, cout, factor * cout, rng);
    }
    w.resample_bias = Matrix<Scalar>::Zero(1, cout);
    w.residual_weight = fan_in_uniform<Scalar>(cin, cin, cout, rng);
    w.residual_bias = Matrix<Scalar>::Zero(1, cout);
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
    f(p + "conv1.weight", w.conv1_weight);
    f(p + "conv1.bias", w.conv1_bias);
    f(p + "film.weight", w.film_weight);
    f(p + "film.bias", w.film_bias);
    f(p + "conv2.weight", w.conv2_weight);
    f(p + "conv2.bias", w.conv2_bias);
    f(p + "bfilm.gamma_proj", w.bfilm.gamma_proj);
    f(p + "bfilm.beta_proj", w.bfilm.beta_proj);
    f(p + "resample.weight", w.resample_weight);
    f(p + "resample.bias", w.resample_bias);
    f(p + "residual.weight", w.residual_weight);
    f(p + "residual.bias", w.residual_bias);
  }
};

template <typename Scalar>
struct AttentionWeights {
  Matrix<Scalar> q_proj, k_proj, v_proj;  // [C x heads*head_dim]
  Matrix<Scalar> out_proj;                // [heads*head_dim x C]

  static AttentionWeights init(Index channels, Rng& rng) {
    const Index inner = kAttentionHeads * kAttentionHeadDim;
    AttentionWeights w;
    w.q_proj = fan_in_uniform<Scalar>(channels, channels, inner, rng);
    w.k_proj = fan_in_uniform<Scalar>(channels, channels, inner, rng);
    w.v_proj = fan_in_uniform<Scalar>(channels, channels, inner, rng);
    w.out_proj = fan_in_uniform<Scalar>(inner, inner, channels, rng);
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
    f(p + "q_proj", w.q_proj);
    f(p + "k_proj", w.k_proj);
    f(p + "v_proj", w.v_proj);
    f(p + "out_proj", w.out_proj);
  }
};

/// Multihead self-attention over time (no mask, no positional encoding) with
/// a residual connection.
template <typename Scalar>
Var<Scalar> attention_bottleneck(const AttentionWeights<Scalar>& w, Var<Scalar> x) {
  auto& tape = *x.tape;
  auto q = matmul(x, tape.parameter(w.q_proj));
  auto k = matmul(x, tape.parameter(w.k_proj));
  auto v = matmul(x, tape.parameter(w.v_proj));
  const Scalar scaling = Scalar(1) / std::sqrt(Scalar(kAttentionHeadDim));
  Var<Scalar> heads{};
  for (Index h = 0; h < kAttentionHeads; ++h) {
    auto qh = slice_cols(q, h * kAttentionHeadDim, kAttentionHeadDim);
    auto kh = slice_cols(k, h * kAttentionHeadDim, kAttentionHeadDim);
    auto vh = slice_cols(v, h * kAttentionHeadDim, kAttentionHeadDim);
    auto weights = softmax_rows(scale(matmul(qh, transpose(kh)), scaling));
    auto oh = matmul(weights, vh);
    heads = h == 0 ? oh : concat_cols(heads, oh);
  }
  return x + matmul(heads, tape.parameter(w.out_proj));
}

template <typename Scalar>
Matrix<Scalar> attention_bottleneck(const AttentionWeights<Scalar>& w, const Matrix<Scalar>& x) {
  Tape<Scalar> tape;
  return attention_bottleneck(w, tape.constant(x)).value();
}

template <typename Scalar>
struct UNetWeights {
  UNetConfig config;

  Matrix<Scalar> class_table;  // [(C + 1) x E], last row is the null token
  Matrix<Scalar> time_w1, time_b1, time_w2, time_b2;
  Matrix<Scalar> stem_weight, stem_bias;
  std::vector<GBlockWeights<Scalar>> encoder;
  std::vector<GBlockWeights<Scalar>> decoder;  // decoder[i] mirrors encoder[i]
  std::vector<Matrix<Scalar>> merge_weight, merge_bias;
  BidirectionalBottleneckWeights<Scalar> mamba;
  AttentionWeights<Scalar> attention;
  Matrix<Scalar> final_weight, final_bias;

  /// Shared weights are drawn before the bottleneck, so two configs that
  /// differ only in bottleneck kind share everything else for a given seed.
  static UNetWeights init(const UNetConfig& config, Rng& rng) {
    config.validate();
    UNetWeights w;
    w.config = config;
    const Index E = config.embed_dim;
    const std::size_t S = config.stage_channels.size();
    w.class_table = normal_matrix<Scalar>(config.num_classes + 1, E, 1.0, rng);
    w.time_w1 = fan_in_uniform<Scalar>(E, E, E, rng);
    w.time_b1 = Matrix<Scalar>::Zero(1, E);
    w.time_w2 = fan_in_uniform<Scalar>(E, E, E, rng);
    w.time_b2 = Matrix<Scalar>::Zero(1, E);
    const Index c0 = config.stage_channels[0];
    w.stem_weight = fan_in_uniform<Scalar>(kConvWidth, kConvWidth, c0, rng);
    w.stem_bias = Matrix<Scalar>::Zero(1, c0);
    for (std::size_t i = 0; i < S; ++i) {
      const Index cin = i == 0 ? c0 : config.stage_channels[i - 1];
      const Index cout = config.stage_channels[i];
      w.encoder.push_back(GBlockWeights<Scalar>::init(Direction::Down, config.stage_factors[i], cin, cout, E, rng));
    }
    for (std::size_t i = 0; i < S; ++i) {
      const Index cin = i == 0 ? c0 : config.stage_channels[i - 1];
      const Index cout = config.stage_channels[i];
      w.decoder.push_back(GBlockWeights<Scalar>::init(Direction::Up, config.stage_factors[i], cout, cin, E, rng));
      w.merge_weight.push_back(fan_in_uniform<Scalar>(2 * cin, 2 * cin, cin, rng));
      w.merge_bias.push_back(Matrix<Scalar>::Zero(1, cin));
    }
    w.final_weight = Matrix<Scalar>::Zero(kConvWidth * c0, 1);
    w.final_bias = Matrix<Scalar>::Zero(1, 1);
    const Index bottleneck_dim = config.stage_channels.back();
    if (config.bottleneck == BottleneckKind::MambaBidirectional) {
      w.mamba = BidirectionalBottleneckWeights<Scalar>::init(bottleneck_dim, rng);
    } else {
      w.attention = AttentionWeights<Scalar>::init(bottleneck_dim, rng);
    }
    return w;
  }

  template <typename F>
  void visit(F&& f) {
    visit_fields(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_fields(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& w, F& f) {
    f(std::string("class_table"), w.class_table);
    f(std::string("time.w1"), w.time_w1);
    f(std::string("time.b1"), w.time_b1);
    f(std::string("time.w2"), w.time_w2);
    f(std::string("time.b2"), w.time_b2);
    f(std::string("stem.weight"), w.stem_weight);
    f(std::string("stem.bias"), w.stem_bias);
    for (std::size_t i = 0; i < w.encoder.size(); ++i) {
      w.encoder[i].visit("encoder." + std::to_string(i) + ".", f);
    }
    if (w.config.bottleneck == BottleneckKind::MambaBidirectional) {
      w.mamba.visit("bottleneck.mamba.", f);
    } else {
      w.attention.visit("bottleneck.attention.", f);
    }
    for (std::size_t i = 0; i < w.decoder.size(); ++i) {
      w.decoder[i].visit("decoder." + std::to_string(i) + ".", f);
      f("merge." + std::to_string(i) + ".weight", w.merge_weight[i]);
      f("merge." + std::to_string(i) + ".bias", w.merge_bias[i]);
    }
    f(std::string("final.weight"), w.final_weight);
    f(std::string("final.bias"), w.final_bias);
  }
};

/// [sin(1000 t w_k) | cos(1000 t w_k)], w_k = 10000^(-k / (dim/2)).
template <typename Scalar>
RowVector<Scalar> sinusoidal_features(double t, Index dim) {
  const Index half = dim / 2;
  RowVector<Scalar> out(dim);
  for (Index k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    const double arg = 1000.0 * t * freq;
    out(k) = static_cast<Scalar>(std::sin(arg));
    out(half + k) = static_cast<Scalar>(std::cos(arg));
  }
  return out;
}

inline void check_diffusion_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("diffusion time must lie in [0, 1]");
}

template <typename Scalar>
Var<Scalar> time_embedding(const UNetWeights<Scalar>& w, Tape<Scalar>& tape, double t) {
  check_diffusion_time(t);
  auto features = tape.constant(sinusoidal_features<Scalar>(t, w.config.embed_dim));
  auto h = silu(linear(features, tape.parameter(w.time_w1), tape.parameter(w.time_b1)));
  return linear(h, tape.parameter(w.time_w2), tape.parameter(w.time_b2));
}

template <typename Scalar>
RowVector<Scalar> time_embedding(const UNetWeights<Scalar>& w, double t) {
  Tape<Scalar> tape;
  return time_embedding(w, tape, t).value();
}

/// conv -> FiLM(cond) -> SiLU -> conv -> BFiLM(envelope) -> SiLU -> resample,
/// plus a 1x1-convolved, resampled residual.
template <typename Scalar>
Var<Scalar> gblock(const GBlockWeights<Scalar>& w, Var<Scalar> x, Var<Scalar> cond,
                   const TemporalEnvelope& envelope) {
  auto& tape = *x.tape;
  if (x.cols() != w.in_channels()) throw std::invalid_argument("gblock: input channel mismatch");
  if (w.direction == Direction::Down && x.rows() % w.factor != 0) {
    throw std::invalid_argument("gblock: factor must divide input length");
  }
  const Index cout = w.out_channels();
  auto h = conv1d(x, tape.parameter(w.conv1_weight), tape.parameter(w.conv1_bias), kConvWidth, 1, 1);
  auto film = linear(cond, tape.parameter(w.film_weight), tape.parameter(w.film_bias));
  auto gamma = add_scalar(slice_cols(film, 0, cout), Scalar(1));
  auto beta = slice_cols(film, cout, cout);
  h = silu(add_row(mul_row(h, gamma), beta));
  h = conv1d(h, tape.parameter(w.conv2_weight), tape.parameter(w.conv2_bias), kConvWidth, 1, 1);
  const Index blocks = bfilm_block_count(h.rows(), envelope.size());
  h = silu(bfilm(h, envelope, tape.parameter(w.bfilm.gamma_proj), tape.parameter(w.bfilm.beta_proj), blocks));
  auto residual = linear(x, tape.parameter(w.residual_weight), tape.parameter(w.residual_bias));
  if (w.direction == Direction::Down) {
    h = downsample_conv(h, tape.parameter(w.resample_weight), tape.parameter(w.resample_bias), w.factor);
    residual = avg_pool_rows(residual, w.factor);
  } else {
    h = upsample_conv(h, tape.parameter(w.resample_weight), tape.parameter(w.resample_bias), w.factor);
    residual = repeat_rows(residual, w.factor);
  }
  return h + residual;
}

template <typename Scalar>
Matrix<Scalar> gblock_forward(const GBlockWeights<Scalar>& w, const Matrix<Scalar>& f_in,
                              const RowVector<Scalar>& class_emb, const TemporalEnvelope& envelope,
                              const RowVector<Scalar>& t_emb, Direction direction) {
  if (direction != w.direction) throw std::invalid_argument("gblock_forward: direction mismatch");
  if (class_emb.size() != t_emb.size() || class_emb.size() != w.film_weight.rows()) {
    throw std::invalid_argument("gblock_forward: embedding size mismatch");
  }
  Tape<Scalar> tape;
  auto cond = tape.constant(class_emb + t_emb);
  return gblock(w, tape.constant(f_in), cond, envelope).value();
}

/// Predicted noise for x_t ([N x 1]).
template <typename Scalar>
Var<Scalar> unet(const UNetWeights<Scalar>& w, Var<Scalar> x_t, double t, const ClassLabel& label,
                 const TemporalEnvelope& envelope) {
  const UNetConfig& cfg = w.config;
  auto& tape = *x_t.tape;
  if (x_t.rows() != cfg.length || x_t.cols() != 1) throw std::invalid_argument("unet: input length mismatch");
  if (label.num_classes != cfg.num_classes || !label.valid()) throw std::invalid_argument("unet: invalid label");
  if (envelope.size() != cfg.envelope_frames()) throw std::invalid_argument("unet: envelope length mismatch");

  auto cond = row_at(tape.parameter(w.class_table), label.index) + time_embedding(w, tape, t);
  auto h = conv1d(x_t, tape.parameter(w.stem_weight), tape.parameter(w.stem_bias), kConvWidth, 1, 1);
  std::vector<Var<Scalar>> skips;
  for (const auto& block : w.encoder) {
    skips.push_back(h);
    h = gblock(block, h, cond, envelope);
  }
  if (cfg.bottleneck == BottleneckKind::MambaBidirectional) {
    h = bidirectional_bottleneck(w.mamba, h);
  } else {
    h = attention_bottleneck(w.attention, h);
  }
  for (std::size_t i = w.decoder.size(); i-- > 0;) {
    h = gblock(w.decoder[i], h, cond, envelope);
    h = linear(concat_cols(h, skips[i]), tape.parameter(w.merge_weight[i]), tape.parameter(w.merge_bias[i]));
  }
  return conv1d(h, tape.parameter(w.final_weight), tape.parameter(w.final_bias), kConvWidth, 1, 1);
}

template <typename Scalar>
Vector<Scalar> unet_forward(const UNetWeights<Scalar>& w, const Vector<Scalar>& x_t, double t,
                            const ClassLabel& label, const TemporalEnvelope& envelope) {
  if (x_t.size() != w.config.length) throw std::invalid_argument("unet_forward: input length mismatch");
  Tape<Scalar> tape;
  return unet(w, tape.constant(Matrix<Scalar>(x_t)), t, label, envelope).value().col(0);
}

}  // namespace mambafoley
