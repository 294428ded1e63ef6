#pragma once

// Noise-prediction training: per-item unconditional dropout, batched
// reverse-mode gradients, Adam, and the epoch loop.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambafoley/diffusion.hpp"
#include "mambafoley/unet.hpp"

namespace mambafoley {

template <typename Scalar>
using ParameterMap = std::map<std::string, Matrix<Scalar>>;

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-4;
  int batch_size = 4;
  double uncond_prob = 0.1;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  double t_min = 1e-4;       // training times are drawn from U[t_min, 1]

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (!(uncond_prob >= 0.0 && uncond_prob <= 1.0)) {
      throw std::invalid_argument("TrainConfig: unconditional probability must lie in [0, 1]");
    }
    if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
    if (!(t_min >= 0.0 && t_min < 1.0)) throw std::invalid_argument("TrainConfig: t_min must lie in [0, 1)");
  }
};

struct TrainingItem {
  Eigen::VectorXf waveform;
  int label = 0;
  TemporalEnvelope envelope;
};

template <typename Scalar>
struct StepResult {
  Scalar loss{};
  ParameterMap<Scalar> gradients;
  std::vector<int> labels_used;  // after unconditional dropout
};

/// Gradients of every visited parameter from a tape after backward().
template <typename Scalar>
ParameterMap<Scalar> collect_gradients(const UNetWeights<Scalar>& weights, const Tape<Scalar>& tape) {
  ParameterMap<Scalar> grads;
  weights.visit([&](const std::string& name, const Matrix<Scalar>& m) { grads[name] = tape.gradient(m); });
  return grads;
}

/// Mean noise-prediction loss over the batch and its gradient. Item i is
/// noised at time t_draws[i] with noise_draws[i]; its label is replaced by the
/// null token when a U[0,1) draw from `rng` falls below uncond_prob.
template <typename Scalar>
StepResult<Scalar> train_step(const UNetWeights<Scalar>& weights, std::span<const TrainingItem* const> batch,
                              std::span<const double> t_draws, std::span<const Vector<Scalar>> noise_draws,
                              Rng& rng, double uncond_prob) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (t_draws.size() != batch.size() || noise_draws.size() != batch.size()) {
    throw std::invalid_argument("train_step: one time and noise draw per item required");
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int C = weights.config.num_classes;
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch.size());

  StepResult<Scalar> result;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainingItem& item = *batch[i];
    if (item.waveform.size() != weights.config.length) {
      throw std::invalid_argument("train_step: waveform length differs from the model length");
    }
    const bool drop = uniform(rng) < uncond_prob;
    const ClassLabel label = drop ? ClassLabel::null(C) : ClassLabel{item.label, C};
    result.labels_used.push_back(label.index);

    const Vector<Scalar> x0 = item.waveform.cast<Scalar>();
    const Vector<Scalar>& eps = noise_draws[i];
    Tape<Scalar> tape;
    auto x_t = tape.constant(Matrix<Scalar>(forward_noising(x0, t_draws[i], eps)));
    auto prediction = unet(weights, x_t, t_draws[i], label, item.envelope);
    auto loss = scale(mse(prediction, tape.constant(Matrix<Scalar>(eps))), inv_batch);
    tape.backward(loss);
    result.loss += loss.value()(0, 0);

    weights.visit([&](const std::string& name, const Matrix<Scalar>& m) {
      auto [it, inserted] = result.gradients.try_emplace(name, tape.gradient(m));
      if (!inserted) it->second += tape.gradient(m);
    });
  }
  return result;
}

struct AdamSettings {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  ParameterMap<Scalar> m;
  ParameterMap<Scalar> v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam step over every visited parameter. Parameters without
/// an entry in `gradients` are treated as having zero gradient.
template <typename Scalar, typename Weights>
void adam_update(Weights& weights, const ParameterMap<Scalar>& gradients, AdamState<Scalar>& state,
                 const AdamSettings& settings) {
  weights.visit([&](const std::string& name, Matrix<Scalar>& w) {
    auto g_it = gradients.find(name);
    if (g_it != gradients.end() && (g_it->second.rows() != w.rows() || g_it->second.cols() != w.cols())) {
      throw std::invalid_argument("adam_update: gradient shape mismatch for '" + name + "'");
    }
    auto [m_it, m_new] = state.m.try_emplace(name, Matrix<Scalar>::Zero(w.rows(), w.cols()));
    auto [v_it, v_new] = state.v.try_emplace(name, Matrix<Scalar>::Zero(w.rows(), w.cols()));
    if (m_it->second.rows() != w.rows() || m_it->second.cols() != w.cols() || v_it->second.rows() != w.rows() ||
        v_it->second.cols() != w.cols()) {
      throw std::invalid_argument("adam_update: state shape mismatch for '" + name + "'");
    }
  });
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar c1 = Scalar(1.0 / (1.0 - std::pow(settings.beta1, t)));
  const Scalar c2 = Scalar(1.0 / (1.0 - std::pow(settings.beta2, t)));
  const Scalar b1 = Scalar(settings.beta1);
  const Scalar b2 = Scalar(settings.beta2);
  const Scalar lr = Scalar(settings.learning_rate);
  const Scalar eps = Scalar(settings.eps);
  weights.visit([&](const std::string& name, Matrix<Scalar>& w) {
    Matrix<Scalar>& m = state.m.at(name);
    Matrix<Scalar>& v = state.v.at(name);
    auto g_it = gradients.find(name);
    if (g_it == gradients.end()) {
      m *= b1;
      v *= b2;
    } else {
      const Matrix<Scalar>& g = g_it->second;
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    }
    w.array() -= lr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
  });
}

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> curve;
};

struct FitCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(int epoch, const UNetWeights<float>&)> on_checkpoint;
};

/// Trains `weights` in place. Deterministic for a fixed config seed: the
/// epoch order, time draws, noise and dropout all come from one generator.
TrainReport fit(const TrainConfig& config, std::span<const TrainingItem> corpus, UNetWeights<float>& weights,
                const FitCallbacks& callbacks = {});

}  // namespace mambafoley
