#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "mambafoley/conditioning.hpp"

namespace mambafoley {

static_assert(std::endian::native == std::endian::little, "envelope encoding assumes a little-endian host");

void write_envelope(const std::filesystem::path& path, const TemporalEnvelope& env) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::uint32_t count = static_cast<std::uint32_t>(env.size());
  out.write("TAU1", 4);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (Index i = 0; i < env.size(); ++i) {
    const float v = static_cast<float>(env.frames(i));
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TemporalEnvelope read_envelope(const std::filesystem::path& path, Index window, Index hop) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || bytes.compare(0, 4, "TAU1") != 0) {
    throw EnvelopeFormatError("not an envelope file (bad magic)");
  }
  std::uint32_t count = 0;
  std::memcpy(&count, bytes.data() + 4, sizeof count);
  if (bytes.size() != 8 + std::size_t{count} * sizeof(float)) {
    throw EnvelopeFormatError("envelope payload length does not match its frame count");
  }
  TemporalEnvelope env;
  env.window = window;
  env.hop = hop;
  env.frames.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    float v = 0.0f;
    std::memcpy(&v, bytes.data() + 8 + i * sizeof(float), sizeof v);
    if (!std::isfinite(v) || v < 0.0f) throw EnvelopeFormatError("envelope frames must be finite and non-negative");
    env.frames(i) = v;
  }
  return env;
}

}  // namespace mambafoley
