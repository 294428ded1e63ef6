#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "mambafoley/audio.hpp"

namespace fs = std::filesystem;
using namespace mambafoley;

namespace {

const fs::path kCli = MAMBAFOLEY_CLI;
const fs::path kSmokeConfig = MAMBAFOLEY_TEST_DATA "/smoke.toml";

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / ("mf_cli_test_" + std::to_string(::getpid())); }

  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    // one shared trained checkpoint for the generate tests
    ASSERT_EQ(run("train --config " + kSmokeConfig.string() + " --out-dir " + (dir() / "run_a").string() +
                  " --seed 3"),
              0);
    write_tone(dir() / "tone8192.wav", 8192, 0.3);
    write_tone(dir() / "tone4s.wav", 88200, 0.3);
  }
  static void TearDownTestSuite() { fs::remove_all(dir()); }

  static int run(const std::string& args, std::string* output = nullptr) {
    const fs::path out = dir() / "stdout.txt";
    const std::string cmd = kCli.string() + " " + args + " > " + out.string() + " 2>" + (dir() / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    if (output) *output = read(out);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  static void write_tone(const fs::path& p, Index n, double amplitude) {
    AudioWaveform w;
    w.samples.resize(n);
    for (Index i = 0; i < n; ++i) {
      const double env = std::exp(-static_cast<double>(i) / 3000.0);
      w.samples(i) = static_cast<float>(amplitude * env * std::sin(2 * std::numbers::pi * 440.0 * i / 22050.0));
    }
    wav_write(w, p);
  }
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  for (const char* sub : {"train", "generate", "extract-envelope", "evaluate", "spectrogram"}) {
    std::string out;
    EXPECT_EQ(run(std::string(sub) + " --help", &out), 0) << sub;
    EXPECT_NE(out.find("--"), std::string::npos) << sub;
  }
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("evaluate --ref a.wav --gen b.wav --bogus 1"), 2);
  EXPECT_EQ(run("evaluate --ref a.wav"), 2);
}

TEST_F(Cli, TrainWritesCurveAndCheckpoints) {
  const fs::path run_dir = dir() / "run_a";
  EXPECT_TRUE(fs::exists(run_dir / "final.mfck"));
  EXPECT_TRUE(fs::exists(run_dir / "epoch_0002.mfck"));
  EXPECT_TRUE(fs::exists(run_dir / "epoch_0004.mfck"));
  std::istringstream csv(read(run_dir / "loss.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "epoch,loss,wall_seconds");
  EXPECT_EQ(lines[5].substr(0, 2), "5,");
}

TEST_F(Cli, TrainIsDeterministic) {
  ASSERT_EQ(run("train --config " + kSmokeConfig.string() + " --out-dir " + (dir() / "run_b").string() + " --seed 3"),
            0);
  EXPECT_EQ(read(dir() / "run_a" / "final.mfck"), read(dir() / "run_b" / "final.mfck"));
  ASSERT_EQ(run("train --config " + kSmokeConfig.string() + " --out-dir " + (dir() / "run_c").string() + " --seed 4"),
            0);
  EXPECT_NE(read(dir() / "run_a" / "final.mfck"), read(dir() / "run_c" / "final.mfck"));
}

TEST_F(Cli, TrainErrors) {
  EXPECT_EQ(run("train --config " + (dir() / "missing.toml").string() + " --out-dir " + (dir() / "x").string()), 2);
  std::ofstream(dir() / "bad.toml") << "[model]\nlength = 1000\n";
  EXPECT_EQ(run("train --config " + (dir() / "bad.toml").string() + " --out-dir " + (dir() / "x").string()), 2);
}

TEST_F(Cli, ExtractEnvelope) {
  std::string out;
  ASSERT_EQ(run("extract-envelope --in " + (dir() / "tone4s.wav").string() + " --out " + (dir() / "e4.bin").string(),
                &out),
            0);
  EXPECT_NE(out.find("686 frames"), std::string::npos) << out;
  EXPECT_EQ(fs::file_size(dir() / "e4.bin"), 8u + 4u * 686u);
  EXPECT_EQ(run("extract-envelope --in " + (dir() / "tone8192.wav").string() + " --window 9000 --out " +
                (dir() / "x.bin").string()),
            2);
  EXPECT_EQ(run("extract-envelope --in " + (dir() / "nope.wav").string() + " --out " + (dir() / "x.bin").string()), 3);
}

TEST_F(Cli, GenerateFromEnvelopeSources) {
  const std::string ckpt = (dir() / "run_a" / "final.mfck").string();
  ASSERT_EQ(run("extract-envelope --in " + (dir() / "tone8192.wav").string() + " --out " +
                (dir() / "e8k.bin").string()),
            0);
  std::string out;
  const std::string common = "generate --checkpoint " + ckpt + " --class HighTone --steps 8 --seed 5 ";
  ASSERT_EQ(run(common + "--envelope-file " + (dir() / "e8k.bin").string() + " --out " + (dir() / "g1.wav").string(),
                &out),
            0);
  EXPECT_EQ(out.rfind("e_l1 ", 0), 0u) << out;
  const AudioWaveform g = wav_read(dir() / "g1.wav");
  EXPECT_EQ(g.samples.size(), 8192);
  EXPECT_EQ(g.sample_rate, 22050.0);

  ASSERT_EQ(run(common + "--envelope-from " + (dir() / "tone8192.wav").string() + " --out " +
                (dir() / "g2.wav").string()),
            0);
  // the envelope file stores float32 frames, so the two sources agree only closely
  const AudioWaveform g2 = wav_read(dir() / "g2.wav");
  EXPECT_LT((g.samples - g2.samples).cwiseAbs().maxCoeff(), 1e-2f);

  ASSERT_EQ(run(common + "--envelope-file " + (dir() / "e8k.bin").string() + " --out " + (dir() / "g1b.wav").string()),
            0);
  EXPECT_EQ(read(dir() / "g1.wav"), read(dir() / "g1b.wav"));

  ASSERT_EQ(run("generate --checkpoint " + ckpt + " --class 1 --steps 8 --seed 6 --envelope-file " +
                (dir() / "e8k.bin").string() + " --out " + (dir() / "g3.wav").string()),
            0);
  EXPECT_NE(read(dir() / "g1.wav"), read(dir() / "g3.wav"));
}

TEST_F(Cli, GenerateErrors) {
  const std::string ckpt = (dir() / "run_a" / "final.mfck").string();
  const std::string env = " --envelope-from " + (dir() / "tone8192.wav").string();
  const std::string out = " --out " + (dir() / "bad.wav").string();
  EXPECT_EQ(run("generate --checkpoint " + ckpt + " --class 0 --steps 0" + env + out), 2);
  EXPECT_EQ(run("generate --checkpoint " + ckpt + " --class 2" + env + out), 2);
  EXPECT_EQ(run("generate --checkpoint " + ckpt + " --class Nope" + env + out), 2);
  EXPECT_EQ(run("generate --checkpoint " + ckpt + " --class 0 --envelope-from " + (dir() / "tone4s.wav").string() + out),
            2);
  EXPECT_EQ(run("generate --checkpoint " + ckpt + " --class 0" + out), 2);
  EXPECT_EQ(run("generate --checkpoint " + (dir() / "none.mfck").string() + " --class 0" + env + out), 3);
  EXPECT_FALSE(fs::exists(dir() / "bad.wav"));
}

TEST_F(Cli, Evaluate) {
  std::string out;
  const std::string tone = (dir() / "tone8192.wav").string();
  ASSERT_EQ(run("evaluate --ref " + tone + " --gen " + tone, &out), 0);
  EXPECT_EQ(out, "0.000000\n");

  AudioWaveform silence, constant;
  silence.samples = Eigen::VectorXf::Zero(8192);
  constant.samples = Eigen::VectorXf::Constant(8192, 0.5f);
  wav_write(silence, dir() / "silence.wav");
  wav_write(constant, dir() / "half.wav");
  ASSERT_EQ(run("evaluate --ref " + (dir() / "silence.wav").string() + " --gen " + (dir() / "half.wav").string(), &out),
            0);
  EXPECT_EQ(out, "0.500000\n");

  EXPECT_EQ(run("evaluate --ref " + tone + " --gen " + (dir() / "tone4s.wav").string()), 2);
  EXPECT_EQ(run("evaluate --ref " + tone + " --gen " + (dir() / "missing.wav").string()), 3);
}

TEST_F(Cli, Spectrogram) {
  const std::string tone = (dir() / "tone8192.wav").string();
  std::string out;
  ASSERT_EQ(run("spectrogram --in " + tone + " --out " + (dir() / "s1.png").string(), &out), 0);
  EXPECT_EQ(out, "61 x 257\n");
  ASSERT_EQ(run("spectrogram --in " + tone + " --out " + (dir() / "s2.png").string()), 0);
  EXPECT_EQ(read(dir() / "s1.png"), read(dir() / "s2.png"));
  EXPECT_EQ(read(dir() / "s1.png").substr(1, 3), "PNG");

  AudioWaveform tiny;
  tiny.samples = Eigen::VectorXf::Zero(300);
  wav_write(tiny, dir() / "tiny.wav");
  EXPECT_EQ(run("spectrogram --in " + (dir() / "tiny.wav").string() + " --out " + (dir() / "t.png").string()), 2);
}
