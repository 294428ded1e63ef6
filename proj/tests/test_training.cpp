#include <gtest/gtest.h>

#include "mambafoley/corpus.hpp"
#include "mambafoley/training.hpp"
#include "unet_fixtures.hpp"

using namespace mambafoley;
using namespace mambafoley::testing;

namespace {

// Minimal weights object over a name -> matrix map.
struct Holder {
  ParameterMap<double>* p;
  template <typename F>
  void visit(F&& f) {
    for (auto& [name, m] : *p) f(name, m);
  }
};

struct Tiny {
  UNetConfig cfg = tiny_config();
  std::vector<TrainingItem> items;

  explicit Tiny(int count = 2) {
    Rng rng(21);
    for (int i = 0; i < count; ++i) {
      TrainingItem item;
      item.waveform = random_matrix(cfg.length, 1, rng, -0.5, 0.5).cast<float>();
      item.label = i % 2;
      item.envelope = rms_envelope(item.waveform, cfg.envelope_window, cfg.envelope_hop);
      items.push_back(item);
    }
  }
};

}  // namespace

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  Rng rng(1);
  ParameterMap<double> params{{"w", random_matrix(3, 4, rng)}};
  const ParameterMap<double> start = params;
  Holder holder{&params};
  AdamState<double> state;
  AdamSettings settings;
  settings.learning_rate = 1e-3;
  const Eigen::MatrixXd g = random_matrix(3, 4, rng);
  adam_update(holder, ParameterMap<double>{{"w", g}}, state, settings);
  const Eigen::MatrixXd step = params["w"] - start.at("w");
  for (Index i = 0; i < step.size(); ++i) {
    EXPECT_NEAR(std::abs(step.data()[i]), 1e-3, 1e-3 * 1e-6);
    EXPECT_LT(step.data()[i] * g.data()[i], 0.0);
  }

  // scaling the gradient leaves the first step unchanged up to the eps term
  ParameterMap<double> other{{"w", start.at("w")}};
  Holder h2{&other};
  AdamState<double> s2;
  adam_update(h2, ParameterMap<double>{{"w", Eigen::MatrixXd(37.0 * g)}}, s2, settings);
  const Eigen::MatrixXd eps_term = settings.learning_rate * settings.eps / g.array().abs();
  EXPECT_TRUE(((other["w"] - params["w"]).array().abs() <= eps_term.array() + 1e-15).all());
}

TEST(Adam, ZeroGradientAndConstantGradient) {
  Rng rng(2);
  ParameterMap<double> params{{"w", random_matrix(2, 2, rng)}};
  const Eigen::MatrixXd start = params["w"];
  Holder holder{&params};
  AdamState<double> state;
  adam_update(holder, ParameterMap<double>{{"w", Eigen::MatrixXd::Zero(2, 2)}}, state, AdamSettings{});
  EXPECT_EQ(params["w"], start);
  EXPECT_EQ(state.step, 1);

  AdamState<double> s2;
  const Eigen::MatrixXd g = (Eigen::MatrixXd(2, 2) << 0.5, -2.0, 1e-3, 7.0).finished();
  Eigen::MatrixXd before;
  for (int i = 0; i < 200; ++i) {
    before = params["w"];
    adam_update(holder, ParameterMap<double>{{"w", g}}, s2, AdamSettings{});
  }
  const Eigen::MatrixXd delta = params["w"] - before;
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(delta.data()[i], -1e-4 * (g.data()[i] > 0 ? 1 : -1), 1e-9);
  EXPECT_THROW(adam_update(holder, ParameterMap<double>{{"w", Eigen::MatrixXd::Zero(3, 2)}}, s2, AdamSettings{}),
               std::invalid_argument);
}

TEST(TrainStep, DropoutProbabilityExtremes) {
  Tiny tiny(4);
  Rng rng(3);
  const auto w = UNetWeights<float>::init(tiny.cfg, rng);
  std::vector<const TrainingItem*> batch;
  for (const auto& item : tiny.items) batch.push_back(&item);
  const std::vector<double> times(4, 0.5);
  std::vector<Eigen::VectorXf> noise(4, Eigen::VectorXf::Ones(tiny.cfg.length));
  const auto all_null = train_step<float>(w, batch, times, noise, rng, 1.0);
  for (int l : all_null.labels_used) EXPECT_EQ(l, 2);
  const auto none = train_step<float>(w, batch, times, noise, rng, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(none.labels_used[i], tiny.items[i].label);
  EXPECT_THROW(train_step<float>(w, {}, {}, {}, rng, 0.0), std::invalid_argument);
}

TEST(TrainStep, DeterministicForFixedSeed) {
  Tiny tiny;
  Rng init(4);
  const auto w = UNetWeights<float>::init(tiny.cfg, init);
  std::vector<const TrainingItem*> batch{&tiny.items[0], &tiny.items[1]};
  const std::vector<double> times{0.2, 0.7};
  Rng nrng(5);
  std::vector<Eigen::VectorXf> noise{random_matrix(256, 1, nrng).cast<float>(), random_matrix(256, 1, nrng).cast<float>()};
  Rng a(6), b(6);
  const auto ra = train_step<float>(w, batch, times, noise, a, 0.5);
  const auto rb = train_step<float>(w, batch, times, noise, b, 0.5);
  EXPECT_EQ(ra.loss, rb.loss);
  EXPECT_EQ(ra.labels_used, rb.labels_used);
  for (const auto& [name, g] : ra.gradients) EXPECT_EQ(g, rb.gradients.at(name)) << name;
}

TEST(TrainStep, GradientsMatchFiniteDifferences) {
  Tiny tiny(1);
  Rng rng(7);
  auto w = UNetWeights<double>::init(tiny.cfg, rng);
  jitter_weights(w, rng);
  const std::vector<const TrainingItem*> batch{&tiny.items[0]};
  const std::vector<double> times{0.35};
  const std::vector<Eigen::VectorXd> noise{random_matrix(tiny.cfg.length, 1, rng)};
  auto loss = [&]() {
    Rng r(0);
    return train_step<double>(w, batch, times, noise, r, 0.0).loss;
  };
  Rng r(0);
  const auto result = train_step<double>(w, batch, times, noise, r, 0.0);

  std::vector<std::pair<std::string, Eigen::MatrixXd*>> tensors;
  w.visit([&](const std::string& name, Eigen::MatrixXd& m) { tensors.emplace_back(name, &m); });
  int checked = 0;
  for (std::size_t k = 0; k < tensors.size(); k += tensors.size() / 20) {
    auto& [name, m] = tensors[k];
    std::uniform_int_distribution<Index> pick(0, m->size() - 1);
    const Index i = pick(rng);
    const double saved = m->data()[i];
    m->data()[i] = saved + 1e-4;
    const double up = loss();
    m->data()[i] = saved - 1e-4;
    const double down = loss();
    m->data()[i] = saved;
    const double fd = (up - down) / 2e-4;
    const double analytic = result.gradients.at(name).data()[i];
    EXPECT_LE(std::abs(analytic - fd), 1e-3 * std::abs(fd) + 1e-8) << name << "[" << i << "]";
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(Fit, ZeroEpochsIsNoOp) {
  Tiny tiny;
  Rng rng(8);
  auto w = UNetWeights<float>::init(tiny.cfg, rng);
  const auto before = w;
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto report = fit(cfg, tiny.items, w);
  EXPECT_TRUE(report.curve.empty());
  EXPECT_EQ(w.class_table, before.class_table);
  EXPECT_EQ(w.final_weight, before.final_weight);
}

TEST(Fit, DeterministicCurveAndLengthCheck) {
  Tiny tiny(3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 42;
  Rng r1(9), r2(9);
  auto w1 = UNetWeights<float>::init(tiny.cfg, r1);
  auto w2 = UNetWeights<float>::init(tiny.cfg, r2);
  int checkpoints = 0;
  cfg.checkpoint_every = 2;
  FitCallbacks callbacks;
  callbacks.on_checkpoint = [&](int epoch, const UNetWeights<float>&) {
    EXPECT_EQ(epoch, 2);
    ++checkpoints;
  };
  const auto a = fit(cfg, tiny.items, w1, callbacks);
  const auto b = fit(cfg, tiny.items, w2);
  ASSERT_EQ(a.curve.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.curve[i].loss, b.curve[i].loss);
  EXPECT_EQ(w1.final_weight, w2.final_weight);
  EXPECT_EQ(checkpoints, 1);

  auto bad = tiny.items;
  bad[0].waveform.conservativeResize(128);
  EXPECT_THROW(fit(cfg, bad, w1), std::invalid_argument);
}

TEST(ToyCorpus, ClipsAreDistinct) {
  ToyCorpusSpec spec;
  const auto items = toy_corpus(spec);
  ASSERT_EQ(items.size(), 8u);
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(items[i].label, static_cast<int>(i % 2));
    EXPECT_EQ(items[i].waveform.size(), 8192);
    EXPECT_LE(items[i].waveform.cwiseAbs().maxCoeff(), 1.0f);
    EXPECT_EQ(items[i].envelope.size(), 61);
    for (std::size_t j = 0; j < i; ++j) EXPECT_GT((items[i].envelope.frames - items[j].envelope.frames).norm(), 1e-3);
  }
}
