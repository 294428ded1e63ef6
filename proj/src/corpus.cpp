#include "mambafoley/corpus.hpp"

#include <cmath>
#include <numbers>

namespace mambafoley {

std::vector<TrainingItem> toy_corpus(const ToyCorpusSpec& spec, Index window, Index hop) {
  if (spec.clips < 1 || spec.classes < 1) throw std::invalid_argument("toy_corpus: need at least one clip and class");
  if (spec.length < window) throw std::invalid_argument("toy_corpus: length shorter than the envelope window");
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> phase_draw(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);

  std::vector<TrainingItem> items;
  for (int i = 0; i < spec.clips; ++i) {
    const int label = i % spec.classes;
    const double f0 = 440.0 / static_cast<double>(label + 1);
    const Index onset = (spec.length * (1 + 2 * i)) / (4 * spec.clips + 2);
    const double decay = 0.04 * (1.0 + static_cast<double>((i / spec.classes) % 3)) * (1.0 + jitter(rng));
    const double phase = phase_draw(rng);

    TrainingItem item;
    item.label = label;
    item.waveform = Eigen::VectorXf::Zero(spec.length);
    for (Index n = onset; n < spec.length; ++n) {
      const double t = static_cast<double>(n - onset) / spec.sample_rate;
      double tone = 0.0;
      for (int h = 0; h <= label; ++h) {
        tone += std::sin(2.0 * std::numbers::pi * f0 * (h + 1) * t + phase) / static_cast<double>(h + 1);
      }
      const double norm = label == 0 ? 1.0 : 1.0 + 0.5 * label;
      item.waveform(n) = static_cast<float>(0.5 * std::exp(-t / decay) * tone / norm);
    }
    item.envelope = rms_envelope(item.waveform, window, hop);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace mambafoley
