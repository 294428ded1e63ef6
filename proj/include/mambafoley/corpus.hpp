#pragma once

#include <cstdint>
#include <vector>

#include "mambafoley/training.hpp"

namespace mambafoley {

struct ToyCorpusSpec {
  int clips = 8;
  int classes = 2;
  Index length = 8192;
  double sample_rate = 22050.0;
  std::uint64_t seed = 0;
};

/// Decaying narrowband tones, one onset time per clip. Class c has
/// fundamental 440 / (c + 1) Hz with c extra harmonics; clip i has class i % classes.
std::vector<TrainingItem> toy_corpus(const ToyCorpusSpec& spec, Index window = kDefaultWindow,
                                     Index hop = kDefaultHop);

}  // namespace mambafoley
