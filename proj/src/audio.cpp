#include "mambafoley/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include <png.h>
#include <unsupported/Eigen/FFT>

namespace mambafoley {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV encoding assumes a little-endian host");

std::uint32_t le32(const char* p) {
  std::uint32_t v = 0;
  std::memcpy(&v, p, 4);
  return v;
}

std::uint16_t le16(const char* p) {
  std::uint16_t v = 0;
  std::memcpy(&v, p, 2);
  return v;
}

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

AudioWaveform wav_read(const std::filesystem::path& path) {
  using Kind = WavFormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw WavFormatError(Kind::Parse, "not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::size_t len = le32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (len > bytes.size() - body) throw WavFormatError(Kind::Parse, "chunk '" + id + "' extends past end of file");
    if (id == "fmt ") {
      if (len < 16) throw WavFormatError(Kind::Parse, "fmt chunk too short");
      const std::uint16_t format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format != 1) throw WavFormatError(Kind::Compression, "only uncompressed PCM is supported");
      have_fmt = true;
    } else if (id == "data") {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw WavFormatError(Kind::Parse, "missing fmt chunk");
  if (data == nullptr) throw WavFormatError(Kind::Parse, "missing data chunk");
  if (channels != 1) throw WavFormatError(Kind::ChannelCount, "expected mono, found " + std::to_string(channels) + " channels");
  if (bits != 16) throw WavFormatError(Kind::BitDepth, "expected 16-bit samples, found " + std::to_string(bits));
  if (data_len % 2 != 0) throw WavFormatError(Kind::Parse, "data chunk has an odd byte count");

  AudioWaveform wav;
  wav.sample_rate = rate;
  wav.samples.resize(static_cast<Index>(data_len / 2));
  for (Index i = 0; i < wav.samples.size(); ++i) {
    std::int16_t s = 0;
    std::memcpy(&s, data + 2 * i, 2);
    wav.samples(i) = static_cast<float>(s) / 32768.0f;
  }
  return wav;
}

void wav_write(const AudioWaveform& x, const std::filesystem::path& path) {
  const std::uint32_t n = static_cast<std::uint32_t>(x.samples.size());
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(x.sample_rate));
  std::string out;
  out += "RIFF";
  put<std::uint32_t>(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, 1);
  put<std::uint16_t>(out, 1);
  put<std::uint32_t>(out, rate);
  put<std::uint32_t>(out, rate * 2);
  put<std::uint16_t>(out, 2);
  put<std::uint16_t>(out, 16);
  out += "data";
  put<std::uint32_t>(out, 2 * n);
  for (Index i = 0; i < x.samples.size(); ++i) {
    const float v = x.samples(i);
    if (!std::isfinite(v)) throw std::invalid_argument("wav_write: non-finite sample");
    const double clamped = std::clamp(static_cast<double>(v), -1.0, 1.0);
    const long q = std::clamp(std::lround(clamped * 32768.0), -32768L, 32767L);
    put<std::int16_t>(out, static_cast<std::int16_t>(q));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("failed writing " + path.string());
}

double e_l1(const TemporalEnvelope& tau, const TemporalEnvelope& tau_hat) {
  if (tau.size() != tau_hat.size()) throw std::invalid_argument("e_l1: envelope lengths differ");
  if (tau.window != tau_hat.window || tau.hop != tau_hat.hop) {
    throw std::invalid_argument("e_l1: envelope window or hop differ");
  }
  if (tau.size() == 0) throw std::invalid_argument("e_l1: empty envelopes");
  return (tau.frames - tau_hat.frames).cwiseAbs().mean();
}

Eigen::VectorXd hann_window(Index length) {
  Eigen::VectorXd w(length);
  for (Index n = 0; n < length; ++n) {
    w(n) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
  }
  return w;
}

std::vector<std::complex<double>> frame_spectrum(const Eigen::VectorXf& x, Index offset) {
  if (offset < 0 || offset + kStftWindow > x.size()) throw std::invalid_argument("frame_spectrum: frame out of range");
  static const Eigen::VectorXd window = hann_window(kStftWindow);
  std::vector<double> frame(static_cast<std::size_t>(kStftWindow));
  for (Index n = 0; n < kStftWindow; ++n) frame[static_cast<std::size_t>(n)] = window(n) * x(offset + n);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> half;
  fft.fwd(half, frame);
  std::vector<std::complex<double>> full(static_cast<std::size_t>(kStftWindow));
  for (Index k = 0; k < kStftBins; ++k) full[static_cast<std::size_t>(k)] = half[static_cast<std::size_t>(k)];
  for (Index k = kStftBins; k < kStftWindow; ++k) {
    full[static_cast<std::size_t>(k)] = std::conj(half[static_cast<std::size_t>(kStftWindow - k)]);
  }
  return full;
}

Spectrogram stft_magnitude(const AudioWaveform& x) {
  if (x.samples.size() < kStftWindow) throw std::invalid_argument("stft_magnitude: signal shorter than 512 samples");
  const Index frames = (x.samples.size() - kStftWindow) / kStftHop + 1;
  Spectrogram spec;
  spec.magnitude.resize(frames, kStftBins);
  for (Index f = 0; f < frames; ++f) {
    const auto full = frame_spectrum(x.samples, f * kStftHop);
    for (Index k = 0; k < kStftBins; ++k) spec.magnitude(f, k) = std::abs(full[static_cast<std::size_t>(k)]);
  }
  return spec;
}

void spectrogram_export(const Spectrogram& spec, const std::filesystem::path& path) {
  if (spec.frames() < 1 || spec.bins() < 1) throw std::invalid_argument("spectrogram_export: empty spectrogram");
  const Index width = spec.frames();
  const Index height = spec.bins();
  const double peak = spec.magnitude.maxCoeff();
  std::vector<png_byte> pixels(static_cast<std::size_t>(width * height));
  for (Index f = 0; f < width; ++f) {
    for (Index k = 0; k < height; ++k) {
      double db = kSpectrogramFloorDb;
      if (peak > 0.0 && spec.magnitude(f, k) > 0.0) {
        db = std::max(kSpectrogramFloorDb, 20.0 * std::log10(spec.magnitude(f, k) / peak));
      }
      const double level = 255.0 * (db - kSpectrogramFloorDb) / -kSpectrogramFloorDb;
      const Index row = height - 1 - k;
      pixels[static_cast<std::size_t>(row * width + f)] = static_cast<png_byte>(std::lround(level));
    }
  }

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index row = 0; row < height; ++row) png_write_row(png, &pixels[static_cast<std::size_t>(row * width)]);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw std::runtime_error("failed closing " + path.string());
}

}  // namespace mambafoley
