#include "mambafoley/tensor_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

namespace mambafoley {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::int64_t Tensor::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const Tensor& TensorStore::at(const std::string& key) const {
  auto it = tensors.find(key);
  if (it == tensors.end()) throw std::out_of_range("no tensor named '" + key + "'");
  return it->second;
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

void checkpoint_save(const TensorStore& store, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  const nlohmann::json config =
      store.model_config.empty() ? nlohmann::json::object() : nlohmann::json::parse(store.model_config);
  manifest["config_hash"] = config_hash(config.empty() ? std::string() : config.dump());
  manifest["model_config"] = config;
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : store.tensors) {
    if (tensor.element_count() != static_cast<std::int64_t>(tensor.data.size())) {
      throw std::invalid_argument("checkpoint_save: tensor '" + name + "' data does not match its shape");
    }
    const std::uint64_t nbytes = tensor.data.size() * sizeof(float);
    entries.push_back({{"name", name}, {"shape", tensor.shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["tensors"] = entries;
  manifest["payload_bytes"] = offset;

  const std::string text = manifest.dump();
  std::string header(kMagic, 4);
  put_u64(header, text.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, tensor] : store.tensors) {
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "failed writing " + path.string());
}

TensorStore checkpoint_load(const std::filesystem::path& path) {
  using Kind = CheckpointError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::Format, "not a checkpoint file (bad magic)");
  }
  const std::uint64_t manifest_len = get_u64(bytes.data() + 4);
  if (manifest_len > bytes.size() - 12) throw CheckpointError(Kind::Format, "manifest extends past end of file");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::Format, std::string("manifest is not valid JSON: ") + e.what());
  }

  TensorStore store;
  std::uint64_t payload_bytes = 0;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(Kind::Version, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto& config = manifest.at("model_config");
    store.model_config = config.empty() ? std::string() : config.dump();
    if (manifest.at("config_hash").get<std::string>() != config_hash(store.model_config)) {
      throw CheckpointError(Kind::Format, "config hash does not match the stored model config");
    }
    payload_bytes = manifest.at("payload_bytes").get<std::uint64_t>();
    const std::uint64_t actual = bytes.size() - 12 - manifest_len;
    if (actual != payload_bytes) {
      throw CheckpointError(Kind::PayloadLength, "payload is " + std::to_string(actual) + " bytes, manifest declares " +
                                                     std::to_string(payload_bytes));
    }
    const char* payload = bytes.data() + 12 + manifest_len;
    std::uint64_t expected_offset = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      Tensor tensor;
      tensor.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      for (auto d : tensor.shape) {
        if (d < 0) throw CheckpointError(Kind::ShapeConsistency, "negative dimension in '" + name + "'");
      }
      if (static_cast<std::uint64_t>(tensor.element_count()) * sizeof(float) != nbytes) {
        throw CheckpointError(Kind::ShapeConsistency, "shape of '" + name + "' does not match its byte length");
      }
      if (offset != expected_offset || offset + nbytes > payload_bytes) {
        throw CheckpointError(Kind::ShapeConsistency, "tensor '" + name + "' has an inconsistent offset");
      }
      expected_offset += nbytes;
      tensor.data.resize(nbytes / sizeof(float));
      std::memcpy(tensor.data.data(), payload + offset, nbytes);
      if (!store.tensors.emplace(name, std::move(tensor)).second) {
        throw CheckpointError(Kind::Format, "duplicate tensor name '" + name + "'");
      }
    }
    if (expected_offset != payload_bytes) {
      throw CheckpointError(Kind::PayloadLength, "tensors do not cover the declared payload");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::Format, std::string("malformed manifest: ") + e.what());
  }
  return store;
}

}  // namespace mambafoley
