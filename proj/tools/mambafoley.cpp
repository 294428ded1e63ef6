#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mambafoley/audio.hpp"
#include "mambafoley/config.hpp"
#include "mambafoley/corpus.hpp"
#include "mambafoley/tensor_store.hpp"
#include "mambafoley/training.hpp"

namespace fs = std::filesystem;
using namespace mambafoley;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

// Validation failures map to exit code 2, everything else to 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw std::runtime_error("no such file: " + path.string());
}

std::vector<TrainingItem> load_corpus(const AppConfig& cfg) {
  const UNetConfig& m = cfg.description.model;
  if (cfg.data.source == "toy") {
    ToyCorpusSpec spec;
    spec.clips = cfg.data.clips;
    spec.classes = m.num_classes;
    spec.length = m.length;
    spec.sample_rate = m.sample_rate;
    spec.seed = cfg.data.seed;
    return toy_corpus(spec, m.envelope_window, m.envelope_hop);
  }
  std::vector<TrainingItem> items;
  for (std::size_t i = 0; i < cfg.data.files.size(); ++i) {
    require_file(cfg.data.files[i]);
    const AudioWaveform wav = wav_read(cfg.data.files[i]);
    if (wav.samples.size() != m.length) {
      throw UsageError(cfg.data.files[i] + ": expected " + std::to_string(m.length) + " samples");
    }
    TrainingItem item;
    item.waveform = wav.samples;
    item.label = cfg.data.labels[i];
    item.envelope = rms_envelope(item.waveform, m.envelope_window, m.envelope_hop);
    items.push_back(std::move(item));
  }
  return items;
}

void save_checkpoint(const UNetWeights<float>& weights, const ModelDescription& description, const fs::path& path) {
  TensorStore store = store_from_weights(weights);
  store.model_config = to_json(description);
  checkpoint_save(store, path);
}

int cmd_train(const fs::path& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  AppConfig cfg = load_config(config_path);
  if (seed) cfg.train.seed = *seed;
  const auto corpus = load_corpus(cfg);
  fs::create_directories(out_dir);

  Rng rng(cfg.train.seed);
  auto weights = UNetWeights<float>::init(cfg.description.model, rng);
  TrainConfig train = cfg.train;
  train.seed = rng();

  std::ofstream csv(out_dir / "loss.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + (out_dir / "loss.csv").string());
  csv << "epoch,loss,wall_seconds\n";
  FitCallbacks callbacks;
  callbacks.on_epoch = [&](const EpochRecord& r) {
    char line[128];
    std::snprintf(line, sizeof line, "%d,%.9g,%.3f\n", r.epoch, r.loss, r.wall_seconds);
    csv << line << std::flush;
    std::fprintf(stderr, "epoch %d loss %.6f (%.1fs)\n", r.epoch, r.loss, r.wall_seconds);
  };
  callbacks.on_checkpoint = [&](int epoch, const UNetWeights<float>& w) {
    char name[64];
    std::snprintf(name, sizeof name, "epoch_%04d.mfck", epoch);
    save_checkpoint(w, cfg.description, out_dir / name);
  };
  fit(train, corpus, weights, callbacks);
  if (!csv) throw std::runtime_error("failed writing loss.csv");
  save_checkpoint(weights, cfg.description, out_dir / "final.mfck");
  std::cout << "wrote " << (out_dir / "final.mfck").string() << "\n";
  return kExitOk;
}

struct GenerateArgs {
  fs::path checkpoint;
  std::string class_name;
  fs::path envelope_from;
  fs::path envelope_file;
  int steps = 100;
  double guidance = 2.0;
  std::uint64_t seed = 0;
  fs::path out;
};

int cmd_generate(const GenerateArgs& args) {
  if (args.steps < 1) throw UsageError("--steps must be >= 1");
  require_file(args.checkpoint);
  const TensorStore store = checkpoint_load(args.checkpoint);
  ModelDescription description;
  try {
    description = model_description_from_json(store.model_config);
  } catch (const ConfigError& e) {
    throw std::runtime_error(e.what());
  }
  const UNetConfig& m = description.model;
  const int index = resolve_class(description.class_names, args.class_name);

  Rng init_rng(0);
  auto weights = UNetWeights<float>::init(m, init_rng);
  load_weights(weights, store);

  TemporalEnvelope envelope;
  if (!args.envelope_from.empty()) {
    require_file(args.envelope_from);
    const AudioWaveform wav = wav_read(args.envelope_from);
    if (wav.samples.size() < m.envelope_window) throw UsageError("envelope source shorter than the envelope window");
    envelope = rms_envelope(wav.samples, m.envelope_window, m.envelope_hop);
  } else {
    require_file(args.envelope_file);
    envelope = read_envelope(args.envelope_file, m.envelope_window, m.envelope_hop);
  }
  if (envelope.size() != m.envelope_frames()) {
    throw UsageError("envelope has " + std::to_string(envelope.size()) + " frames, model expects " +
                     std::to_string(m.envelope_frames()));
  }

  SamplerSettings settings;
  settings.steps = args.steps;
  settings.guidance = args.guidance;
  settings.seed = args.seed;
  const EpsilonModel<float> model = [&](const Vector<float>& x, double t, const ClassLabel& label,
                                        const TemporalEnvelope& env) { return unet_forward(weights, x, t, label, env); };
  const Vector<float> x = ddpm_sample(model, ClassLabel{index, m.num_classes}, envelope, m.length, settings);

  AudioWaveform out;
  out.samples = x.cwiseMax(-1.0f).cwiseMin(1.0f);
  out.sample_rate = m.sample_rate;
  wav_write(out, args.out);
  const TemporalEnvelope generated = rms_envelope(out.samples, m.envelope_window, m.envelope_hop);
  std::printf("e_l1 %.6f\n", e_l1(envelope, generated));
  return kExitOk;
}

int cmd_extract_envelope(const fs::path& in, Index window, Index hop, const fs::path& out) {
  if (window < 1 || hop < 1) throw UsageError("--window and --hop must be >= 1");
  require_file(in);
  const AudioWaveform wav = wav_read(in);
  if (wav.samples.size() < window) throw UsageError("window is longer than the input");
  const TemporalEnvelope env = rms_envelope(wav.samples, window, hop);
  write_envelope(out, env);
  std::printf("%ld frames\n", static_cast<long>(env.size()));
  return kExitOk;
}

int cmd_evaluate(const fs::path& ref, const fs::path& gen) {
  require_file(ref);
  require_file(gen);
  const AudioWaveform a = wav_read(ref);
  const AudioWaveform b = wav_read(gen);
  if (a.samples.size() != b.samples.size()) throw UsageError("reference and generated lengths differ");
  if (a.samples.size() < kDefaultWindow) throw UsageError("inputs shorter than the envelope window");
  std::printf("%.6f\n", e_l1(rms_envelope(a.samples), rms_envelope(b.samples)));
  return kExitOk;
}

int cmd_spectrogram(const fs::path& in, const fs::path& out) {
  require_file(in);
  const AudioWaveform wav = wav_read(in);
  if (wav.samples.size() < kStftWindow) throw UsageError("input shorter than the STFT window");
  const Spectrogram spec = stft_magnitude(wav);
  spectrogram_export(spec, out);
  std::printf("%ld x %ld\n", static_cast<long>(spec.frames()), static_cast<long>(spec.bins()));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Envelope- and class-conditioned waveform diffusion"};
  app.require_subcommand(1);

  fs::path config_path, out_dir;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Train a model on the configured corpus");
  train->add_option("--config", config_path, "TOML configuration")->required();
  train->add_option("--out-dir", out_dir, "Directory for checkpoints and loss.csv")->required();
  train->add_option("--seed", train_seed, "Overrides [train] seed");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Sample a waveform from a checkpoint");
  generate->add_option("--checkpoint", gen.checkpoint, "Checkpoint (.mfck)")->required();
  generate->add_option("--class", gen.class_name, "Class name or index")->required();
  auto* from = generate->add_option("--envelope-from", gen.envelope_from, "WAV to extract the envelope from");
  auto* file = generate->add_option("--envelope-file", gen.envelope_file, "Envelope binary");
  from->excludes(file);
  file->excludes(from);
  generate->add_option("--steps", gen.steps, "Sampling steps")->capture_default_str();
  generate->add_option("--guidance", gen.guidance, "Guidance weight")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Sampler seed")->capture_default_str();
  generate->add_option("--out", gen.out, "Output WAV")->required();

  fs::path env_in, env_out;
  Index window = kDefaultWindow, hop = kDefaultHop;
  auto* extract = app.add_subcommand("extract-envelope", "Write the RMS envelope of a WAV file");
  extract->add_option("--in", env_in, "Input WAV")->required();
  extract->add_option("--window", window, "Window length")->capture_default_str();
  extract->add_option("--hop", hop, "Hop size")->capture_default_str();
  extract->add_option("--out", env_out, "Output envelope binary")->required();

  fs::path ref, gen_path;
  auto* evaluate = app.add_subcommand("evaluate", "Envelope L1 distance between two WAV files");
  evaluate->add_option("--ref", ref, "Reference WAV")->required();
  evaluate->add_option("--gen", gen_path, "Generated WAV")->required();

  fs::path spec_in, spec_out;
  auto* spectrogram = app.add_subcommand("spectrogram", "Render a log-magnitude spectrogram PNG");
  spectrogram->add_option("--in", spec_in, "Input WAV")->required();
  spectrogram->add_option("--out", spec_out, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, out_dir, train_seed);
    if (*generate) {
      if (gen.envelope_from.empty() == gen.envelope_file.empty()) {
        throw UsageError("exactly one of --envelope-from and --envelope-file is required");
      }
      return cmd_generate(gen);
    }
    if (*extract) return cmd_extract_envelope(env_in, window, hop, env_out);
    if (*evaluate) return cmd_evaluate(ref, gen_path);
    if (*spectrogram) return cmd_spectrogram(spec_in, spec_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
