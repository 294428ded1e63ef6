#pragma once

// TOML run configuration and the model description embedded in checkpoints.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambafoley/diffusion.hpp"
#include "mambafoley/training.hpp"
#include "mambafoley/unet.hpp"

namespace mambafoley {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "toy";  // "toy" or "wav"
  int clips = 8;
  std::uint64_t seed = 0;
  std::vector<std::string> files;  // source = "wav", relative to the config file
  std::vector<int> labels;
};

struct ModelDescription {
  UNetConfig model;
  std::vector<std::string> class_names;
};

struct AppConfig {
  ModelDescription description;
  TrainConfig train;
  SamplerSettings sampler;
  DataConfig data;
};

std::vector<std::string> default_class_names(int num_classes);

AppConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

std::string to_json(const ModelDescription& description);
ModelDescription model_description_from_json(const std::string& json_text);

/// Index of a class given by name or by integer index; throws ConfigError.
int resolve_class(const std::vector<std::string>& class_names, const std::string& name_or_index);

}  // namespace mambafoley
