#pragma once

// Temporal (RMS envelope) and categorical conditioning, and the FiLM /
// block-wise FiLM modulations that inject them into feature maps.

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "mambafoley/ops.hpp"

namespace mambafoley {

inline constexpr Index kDefaultWindow = 512;
inline constexpr Index kDefaultHop = 128;

struct TemporalEnvelope {
  Eigen::VectorXd frames;
  Index window = kDefaultWindow;
  Index hop = kDefaultHop;

  Index size() const { return frames.size(); }
};

/// Number of fully contained frames: floor((N - W) / H) + 1.
inline Index envelope_frame_count(Index num_samples, Index window, Index hop) {
  if (window < 1 || hop < 1) throw std::invalid_argument("envelope: window and hop must be >= 1");
  if (num_samples < window) throw std::invalid_argument("envelope: signal shorter than window");
  return (num_samples - window) / hop + 1;
}

/// tau[i] = sqrt(mean(x[iH .. iH+W-1]^2)), frames fully inside the signal.
template <typename Derived>
TemporalEnvelope rms_envelope(const Eigen::MatrixBase<Derived>& x, Index window = kDefaultWindow,
                              Index hop = kDefaultHop) {
  const Index frames = envelope_frame_count(x.size(), window, hop);
  TemporalEnvelope env;
  env.window = window;
  env.hop = hop;
  env.frames.resize(frames);
  for (Index i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (Index n = i * hop; n < i * hop + window; ++n) {
      const double v = static_cast<double>(x(n));
      acc += v * v;
    }
    env.frames(i) = std::sqrt(acc / static_cast<double>(window));
  }
  return env;
}

/// Mean of the envelope over `blocks` contiguous frame groups; group j covers
/// frames [floor(j I / B), floor((j+1) I / B)).
inline Eigen::VectorXd pool_envelope(const TemporalEnvelope& env, Index blocks) {
  const Index I = env.size();
  if (I == 0) throw std::invalid_argument("pool_envelope: empty envelope");
  if (blocks < 1 || blocks > I) throw std::invalid_argument("pool_envelope: block count must be in [1, I]");
  Eigen::VectorXd pooled(blocks);
  for (Index j = 0; j < blocks; ++j) {
    const Index begin = j * I / blocks;
    const Index end = (j + 1) * I / blocks;
    pooled(j) = env.frames.segment(begin, end - begin).mean();
  }
  return pooled;
}

/// Expands block values onto T timesteps: block size ceil(T / B), last block
/// possibly shorter.
inline Eigen::VectorXd expand_blocks(const Eigen::VectorXd& block_values, Index length) {
  const Index blocks = block_values.size();
  const Index block_len = (length + blocks - 1) / blocks;
  Eigen::VectorXd out(length);
  for (Index t = 0; t < length; ++t) out(t) = block_values(t / block_len);
  return out;
}

struct ClassLabel {
  int index = 0;
  int num_classes = 0;  // real categories; index == num_classes is the null token

  static ClassLabel null(int num_classes) { return ClassLabel{num_classes, num_classes}; }
  bool is_null() const { return index == num_classes; }
  bool valid() const { return num_classes >= 1 && index >= 0 && index <= num_classes; }
};

/// Row lookup in a [(C + 1) x E] table; the last row is the null token.
template <typename Scalar>
RowVector<Scalar> class_embedding(const ClassLabel& label, const Matrix<Scalar>& table) {
  if (!label.valid() || table.rows() != label.num_classes + 1) {
    throw std::invalid_argument("class_embedding: label out of range");
  }
  return table.row(label.index);
}

template <typename Scalar>
struct FilmParams {
  RowVector<Scalar> gamma;
  RowVector<Scalar> beta;
};

template <typename Scalar>
Matrix<Scalar> film_apply(const Matrix<Scalar>& features, const FilmParams<Scalar>& params) {
  if (params.gamma.size() != features.cols() || params.beta.size() != features.cols()) {
    throw std::invalid_argument("film_apply: channel count mismatch");
  }
  return (features.array().rowwise() * params.gamma.array()).rowwise() + params.beta.array();
}

/// Envelope-to-modulation projection of one block-wise FiLM site:
/// gamma = 1 + gamma_proj * e_b, beta = beta_proj * e_b per channel.
template <typename Scalar>
struct BfilmWeights {
  Matrix<Scalar> gamma_proj;  // [1 x C]
  Matrix<Scalar> beta_proj;   // [1 x C]
};

/// Tape form: envelope values are constants, block structure as in bfilm_apply.
template <typename Scalar>
Var<Scalar> bfilm(Var<Scalar> features, const TemporalEnvelope& envelope, Var<Scalar> gamma_proj,
                  Var<Scalar> beta_proj, Index blocks) {
  auto& tape = *features.tape;
  const Eigen::VectorXd per_step = expand_blocks(pool_envelope(envelope, blocks), features.rows());
  auto e = tape.constant(per_step.cast<Scalar>());
  auto gamma = add_scalar(matmul(e, gamma_proj), Scalar(1));
  return cwise_product(features, gamma) + matmul(e, beta_proj);
}

template <typename Scalar>
Matrix<Scalar> bfilm_apply(const Matrix<Scalar>& features, const TemporalEnvelope& envelope,
                           const BfilmWeights<Scalar>& weights, Index blocks) {
  if (weights.gamma_proj.cols() != features.cols() || weights.beta_proj.cols() != features.cols()) {
    throw std::invalid_argument("bfilm_apply: channel count mismatch");
  }
  Tape<Scalar> tape;
  return bfilm(tape.constant(features), envelope, tape.constant(weights.gamma_proj),
               tape.constant(weights.beta_proj), blocks)
      .value();
}

class EnvelopeFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary envelope: "TAU1", uint32 frame count, then float32 frames, all little-endian.
void write_envelope(const std::filesystem::path& path, const TemporalEnvelope& env);
TemporalEnvelope read_envelope(const std::filesystem::path& path, Index window = kDefaultWindow,
                               Index hop = kDefaultHop);

}  // namespace mambafoley
