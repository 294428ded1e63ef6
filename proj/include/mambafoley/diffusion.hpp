#pragma once

// Variance-preserving cosine diffusion: schedule, forward corruption,
// noise-prediction loss, classifier-free guidance and the ancestral sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mambafoley/conditioning.hpp"
#include "mambafoley/types.hpp"

namespace mambafoley {

struct NoiseLevel {
  double alpha;
  double sigma;
};

/// alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2); endpoints are exact.
inline NoiseLevel schedule_eval(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("schedule_eval: t must lie in [0, 1]");
  if (t == 0.0) return {1.0, 0.0};
  if (t == 1.0) return {0.0, 1.0};
  const double angle = 0.5 * std::numbers::pi * t;
  return {std::cos(angle), std::sin(angle)};
}

template <typename Scalar>
Vector<Scalar> forward_noising(const Vector<Scalar>& x0, double t, const Vector<Scalar>& noise) {
  if (x0.size() != noise.size()) throw std::invalid_argument("forward_noising: shape mismatch");
  const NoiseLevel lv = schedule_eval(t);
  return Scalar(lv.alpha) * x0 + Scalar(lv.sigma) * noise;
}

template <typename Scalar>
Scalar epsilon_loss(const Vector<Scalar>& eps_hat, const Vector<Scalar>& eps) {
  if (eps_hat.size() != eps.size() || eps.size() == 0) throw std::invalid_argument("epsilon_loss: shape mismatch");
  return (eps_hat - eps).squaredNorm() / static_cast<Scalar>(eps.size());
}

/// Noise predictor: (x_t, t, label, envelope) -> eps_hat.
template <typename Scalar>
using EpsilonModel =
    std::function<Vector<Scalar>(const Vector<Scalar>&, double, const ClassLabel&, const TemporalEnvelope&)>;

/// eps_uncond + w (eps_cond - eps_uncond); the unconditional pass uses the
/// null class token and the same envelope.
template <typename Scalar>
Vector<Scalar> cfg_predict(const EpsilonModel<Scalar>& model, const Vector<Scalar>& x_t, double t,
                           const ClassLabel& label, const TemporalEnvelope& envelope, double w) {
  const Vector<Scalar> uncond = model(x_t, t, ClassLabel::null(label.num_classes), envelope);
  if (w == 0.0) return uncond;
  const Vector<Scalar> cond = model(x_t, t, label, envelope);
  if (w == 1.0) return cond;
  return uncond + Scalar(w) * (cond - uncond);
}

/// Divisor floor for the clean-signal estimate at alpha_t = 0 (t = 1).
inline constexpr double kAlphaFloor = 1e-4;

struct SamplerSettings {
  int steps = 100;
  double guidance = 2.0;
  std::uint64_t seed = 0;
};

/// Called after each step with (step index from 0, t of the step, x0 estimate).
template <typename Scalar>
using SamplerObserver = std::function<void(int, double, const Vector<Scalar>&)>;

/// Ancestral sampling on the uniform grid t_k = k / steps, k = steps .. 0,
/// starting from standard normal noise. Each step clamps the clean estimate
/// to [-1, 1] and draws from the Gaussian posterior q(x_s | x_t, x0_hat);
/// the last step returns the posterior mean.
template <typename Scalar>
Vector<Scalar> ddpm_sample(const EpsilonModel<Scalar>& model, const ClassLabel& label,
                           const TemporalEnvelope& envelope, Index length, const SamplerSettings& settings,
                           const SamplerObserver<Scalar>& observer = {}) {
  if (settings.steps < 1) throw std::invalid_argument("ddpm_sample: steps must be >= 1");
  if (length < 1) throw std::invalid_argument("ddpm_sample: length must be >= 1");
  std::mt19937_64 rng(settings.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&]() {
    Vector<Scalar> v(length);
    for (Index i = 0; i < length; ++i) v(i) = static_cast<Scalar>(normal(rng));
    return v;
  };

  Vector<Scalar> x = draw();
  const int S = settings.steps;
  for (int k = S; k >= 1; --k) {
    const double t = static_cast<double>(k) / S;
    const double s = static_cast<double>(k - 1) / S;
    const NoiseLevel at = schedule_eval(t);
    const NoiseLevel as = schedule_eval(s);

    const Vector<Scalar> eps = cfg_predict(model, x, t, label, envelope, settings.guidance);
    Vector<Scalar> x0_hat = (x - Scalar(at.sigma) * eps) / Scalar(std::max(at.alpha, kAlphaFloor));
    x0_hat = x0_hat.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
    if (observer) observer(S - k, t, x0_hat);

    // q(x_s | x_t, x0): alpha_{t|s} = alpha_t / alpha_s, sigma_{t|s}^2 = sigma_t^2 - alpha_{t|s}^2 sigma_s^2
    const double alpha_ts = at.alpha / as.alpha;
    const double var_ts = std::max(0.0, at.sigma * at.sigma - alpha_ts * alpha_ts * as.sigma * as.sigma);
    const double st2 = at.sigma * at.sigma;
    const double coef_x = alpha_ts * as.sigma * as.sigma / st2;
    const double coef_x0 = as.alpha * var_ts / st2;
    x = Scalar(coef_x) * x + Scalar(coef_x0) * x0_hat;
    if (k > 1) {
      const double stddev = std::sqrt(var_ts * as.sigma * as.sigma / st2);
      x += Scalar(stddev) * draw();
    }
  }
  return x;
}

}  // namespace mambafoley
