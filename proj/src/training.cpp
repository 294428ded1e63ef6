#include "mambafoley/training.hpp"

#include <algorithm>
#include <numeric>

namespace mambafoley {

TrainReport fit(const TrainConfig& config, std::span<const TrainingItem> corpus, UNetWeights<float>& weights,
                const FitCallbacks& callbacks) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("fit: empty corpus");
  for (const auto& item : corpus) {
    if (item.waveform.size() != weights.config.length) {
      throw std::invalid_argument("fit: corpus item length differs from the model length");
    }
    if (item.label < 0 || item.label >= weights.config.num_classes) {
      throw std::invalid_argument("fit: corpus item label out of range");
    }
    if (item.envelope.size() != weights.config.envelope_frames()) {
      throw std::invalid_argument("fit: corpus item envelope length mismatch");
    }
  }

  Rng rng(config.seed);
  std::uniform_real_distribution<double> time_draw(config.t_min, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  AdamSettings adam;
  adam.learning_rate = config.learning_rate;
  AdamState<float> state;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto start = std::chrono::steady_clock::now();
  const Index length = weights.config.length;

  TrainReport report;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<const TrainingItem*> batch;
      std::vector<double> times;
      std::vector<Vector<float>> noise;
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(&corpus[order[k]]);
        times.push_back(time_draw(rng));
        Vector<float> eps(length);
        for (Index n = 0; n < length; ++n) eps(n) = static_cast<float>(normal(rng));
        noise.push_back(std::move(eps));
      }
      const auto step = train_step<float>(weights, batch, times, noise, rng, config.uncond_prob);
      loss_sum += static_cast<double>(step.loss) * static_cast<double>(batch.size());
      adam_update(weights, step.gradients, state, adam);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(corpus.size());
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.curve.push_back(record);
    if (callbacks.on_epoch) callbacks.on_epoch(record);
    if (callbacks.on_checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      callbacks.on_checkpoint(epoch, weights);
    }
  }
  return report;
}

}  // namespace mambafoley
