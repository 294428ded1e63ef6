#include "mambafoley/config.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <set>

#include <nlohmann/json.hpp>
#include <toml.hpp>

namespace mambafoley {

std::string to_string(BottleneckKind kind) {
  return kind == BottleneckKind::MambaBidirectional ? "mamba_bidirectional" : "attention";
}

BottleneckKind parse_bottleneck_kind(const std::string& name) {
  if (name == "mamba_bidirectional" || name == "mamba") return BottleneckKind::MambaBidirectional;
  if (name == "attention") return BottleneckKind::Attention;
  throw std::invalid_argument("unknown bottleneck kind '" + name + "'");
}

std::vector<std::string> default_class_names(int num_classes) {
  static const std::vector<std::string> foley_classes = {"DogBark", "Footstep",           "GunShot",    "Keyboard",
                                                 "MovingMotorVehicle", "Rain", "SneezeCough"};
  if (num_classes == static_cast<int>(foley_classes.size())) return foley_classes;
  std::vector<std::string> names;
  for (int i = 0; i < num_classes; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

namespace {

void check_keys(const toml::table& table, const std::string& section, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : table) {
    if (!allowed.count(std::string(key.str()))) {
      throw ConfigError("unknown key '" + std::string(key.str()) + "' in [" + section + "]");
    }
  }
}

template <typename T>
T get(const toml::table& table, const std::string& section, const std::string& key, T fallback) {
  const toml::node* node = table.get(key);
  if (node == nullptr) return fallback;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node->value<double>()) return *v;
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value<std::string>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->value<bool>()) return *v;
  } else {
    if (node->is_integer()) {
      const std::int64_t v = node->as_integer()->get();
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) throw ConfigError("[" + section + "] " + key + " must be non-negative");
      }
      return static_cast<T>(v);
    }
  }
  throw ConfigError("[" + section + "] " + key + " has the wrong type");
}

template <typename T>
std::vector<T> get_array(const toml::table& table, const std::string& section, const std::string& key,
                         std::vector<T> fallback) {
  const toml::node* node = table.get(key);
  if (node == nullptr) return fallback;
  const toml::array* array = node->as_array();
  if (array == nullptr) throw ConfigError("[" + section + "] " + key + " must be an array");
  std::vector<T> out;
  for (const auto& element : *array) {
    if constexpr (std::is_same_v<T, std::string>) {
      auto v = element.value<std::string>();
      if (!v) throw ConfigError("[" + section + "] " + key + " must hold strings");
      out.push_back(*v);
    } else {
      if (!element.is_integer()) throw ConfigError("[" + section + "] " + key + " must hold integers");
      out.push_back(static_cast<T>(element.as_integer()->get()));
    }
  }
  return out;
}

const toml::table& section_of(const toml::table& root, const std::string& name) {
  static const toml::table empty;
  const toml::node* node = root.get(name);
  if (node == nullptr) return empty;
  if (!node->is_table()) throw ConfigError("[" + name + "] must be a table");
  return *node->as_table();
}

}  // namespace

AppConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("invalid TOML: ") + std::string(e.description()));
  }
  check_keys(root, "root", {"model", "train", "sampler", "classes", "data"});

  AppConfig cfg;
  UNetConfig& m = cfg.description.model;
  const auto& model = section_of(root, "model");
  check_keys(model, "model",
             {"stage_channels", "stage_factors", "bottleneck", "length", "num_classes", "embed_dim",
              "envelope_window", "envelope_hop", "sample_rate"});
  m.stage_channels = get_array<Index>(model, "model", "stage_channels", m.stage_channels);
  m.stage_factors = get_array<Index>(model, "model", "stage_factors", m.stage_factors);
  try {
    m.bottleneck = parse_bottleneck_kind(get<std::string>(model, "model", "bottleneck", to_string(m.bottleneck)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  m.length = get<Index>(model, "model", "length", m.length);
  m.num_classes = get<int>(model, "model", "num_classes", m.num_classes);
  m.embed_dim = get<Index>(model, "model", "embed_dim", m.embed_dim);
  m.envelope_window = get<Index>(model, "model", "envelope_window", m.envelope_window);
  m.envelope_hop = get<Index>(model, "model", "envelope_hop", m.envelope_hop);
  m.sample_rate = get<double>(model, "model", "sample_rate", m.sample_rate);

  const auto& train = section_of(root, "train");
  check_keys(train, "train",
             {"epochs", "learning_rate", "batch_size", "uncond_prob", "seed", "checkpoint_every", "t_min"});
  TrainConfig& t = cfg.train;
  t.epochs = get<int>(train, "train", "epochs", t.epochs);
  t.learning_rate = get<double>(train, "train", "learning_rate", t.learning_rate);
  t.batch_size = get<int>(train, "train", "batch_size", t.batch_size);
  t.uncond_prob = get<double>(train, "train", "uncond_prob", t.uncond_prob);
  t.seed = get<std::uint64_t>(train, "train", "seed", t.seed);
  t.checkpoint_every = get<int>(train, "train", "checkpoint_every", t.checkpoint_every);
  t.t_min = get<double>(train, "train", "t_min", t.t_min);

  const auto& sampler = section_of(root, "sampler");
  check_keys(sampler, "sampler", {"steps", "guidance", "seed"});
  cfg.sampler.steps = get<int>(sampler, "sampler", "steps", cfg.sampler.steps);
  cfg.sampler.guidance = get<double>(sampler, "sampler", "guidance", cfg.sampler.guidance);
  cfg.sampler.seed = get<std::uint64_t>(sampler, "sampler", "seed", cfg.sampler.seed);

  const auto& classes = section_of(root, "classes");
  check_keys(classes, "classes", {"names"});
  cfg.description.class_names =
      get_array<std::string>(classes, "classes", "names", default_class_names(m.num_classes));

  const auto& data = section_of(root, "data");
  check_keys(data, "data", {"source", "clips", "seed", "files", "labels"});
  DataConfig& d = cfg.data;
  d.source = get<std::string>(data, "data", "source", d.source);
  d.clips = get<int>(data, "data", "clips", d.clips);
  d.seed = get<std::uint64_t>(data, "data", "seed", d.seed);
  for (const auto& f : get_array<std::string>(data, "data", "files", {})) {
    const std::filesystem::path p(f);
    d.files.push_back((p.is_absolute() || base_dir.empty() ? p : base_dir / p).string());
  }
  d.labels = get_array<int>(data, "data", "labels", {});

  try {
    m.validate();
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.sampler.steps < 1) throw ConfigError("[sampler] steps must be >= 1");
  if (static_cast<int>(cfg.description.class_names.size()) != m.num_classes) {
    throw ConfigError("[classes] names must list exactly num_classes entries");
  }
  if (d.source != "toy" && d.source != "wav") throw ConfigError("[data] source must be \"toy\" or \"wav\"");
  if (d.source == "toy" && d.clips < 1) throw ConfigError("[data] clips must be >= 1");
  if (d.source == "wav") {
    if (d.files.empty() || d.files.size() != d.labels.size()) {
      throw ConfigError("[data] files and labels must be non-empty and of equal length");
    }
    for (int label : d.labels) {
      if (label < 0 || label >= m.num_classes) throw ConfigError("[data] label out of range");
    }
  }
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path.parent_path());
}

std::string to_json(const ModelDescription& description) {
  const UNetConfig& m = description.model;
  nlohmann::json j;
  j["stage_channels"] = m.stage_channels;
  j["stage_factors"] = m.stage_factors;
  j["bottleneck"] = to_string(m.bottleneck);
  j["length"] = m.length;
  j["num_classes"] = m.num_classes;
  j["embed_dim"] = m.embed_dim;
  j["envelope_window"] = m.envelope_window;
  j["envelope_hop"] = m.envelope_hop;
  j["sample_rate"] = m.sample_rate;
  j["class_names"] = description.class_names;
  return j.dump();
}

ModelDescription model_description_from_json(const std::string& json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    ModelDescription d;
    UNetConfig& m = d.model;
    m.stage_channels = j.at("stage_channels").get<std::vector<Index>>();
    m.stage_factors = j.at("stage_factors").get<std::vector<Index>>();
    m.bottleneck = parse_bottleneck_kind(j.at("bottleneck").get<std::string>());
    m.length = j.at("length").get<Index>();
    m.num_classes = j.at("num_classes").get<int>();
    m.embed_dim = j.at("embed_dim").get<Index>();
    m.envelope_window = j.at("envelope_window").get<Index>();
    m.envelope_hop = j.at("envelope_hop").get<Index>();
    m.sample_rate = j.at("sample_rate").get<double>();
    d.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.validate();
    if (static_cast<int>(d.class_names.size()) != m.num_classes) {
      throw std::invalid_argument("class name count differs from num_classes");
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model description: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid model description: ") + e.what());
  }
}

int resolve_class(const std::vector<std::string>& class_names, const std::string& name_or_index) {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == name_or_index) return static_cast<int>(i);
  }
  int index = -1;
  const char* first = name_or_index.data();
  const char* last = first + name_or_index.size();
  const auto [ptr, ec] = std::from_chars(first, last, index);
  if (ec != std::errc() || ptr != last || index < 0 || index >= static_cast<int>(class_names.size())) {
    throw ConfigError("unknown class '" + name_or_index + "'");
  }
  return index;
}

}  // namespace mambafoley
