#pragma once

// WAV I/O, STFT magnitudes, PNG spectrogram rendering and the envelope L1 metric.

#include <complex>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "mambafoley/conditioning.hpp"

namespace mambafoley {

inline constexpr double kSampleRate = 22050.0;
inline constexpr Index kStftWindow = 512;
inline constexpr Index kStftHop = 128;
inline constexpr Index kStftBins = kStftWindow / 2 + 1;
inline constexpr double kSpectrogramFloorDb = -80.0;

struct AudioWaveform {
  Eigen::VectorXf samples;
  double sample_rate = kSampleRate;
};

class WavFormatError : public std::runtime_error {
 public:
  enum class Kind { ChannelCount, BitDepth, Compression, Parse };

  WavFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Mono PCM16 only. Samples are int16 / 32768.
AudioWaveform wav_read(const std::filesystem::path& path);

/// Samples are clamped to [-1, 1] and written as round(x * 32768) clamped to int16.
void wav_write(const AudioWaveform& x, const std::filesystem::path& path);

/// Mean absolute difference over frames.
double e_l1(const TemporalEnvelope& tau, const TemporalEnvelope& tau_hat);

struct Spectrogram {
  Eigen::MatrixXd magnitude;  // [frames x 257]
  Index window = kStftWindow;
  Index hop = kStftHop;

  Index frames() const { return magnitude.rows(); }
  Index bins() const { return magnitude.cols(); }
};

/// Periodic Hann window of the given length.
Eigen::VectorXd hann_window(Index length);

/// Full complex spectrum of the Hann-windowed frame starting at `offset`.
std::vector<std::complex<double>> frame_spectrum(const Eigen::VectorXf& x, Index offset);

Spectrogram stft_magnitude(const AudioWaveform& x);

/// Grayscale PNG, width = frames, height = 257, low frequencies at the bottom.
/// Pixel value 255 * (dB + 80) / 80 with dB relative to the spectrogram maximum.
void spectrogram_export(const Spectrogram& spec, const std::filesystem::path& path);

}  // namespace mambafoley
