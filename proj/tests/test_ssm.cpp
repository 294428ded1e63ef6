#include <gtest/gtest.h>

#include <chrono>

#include "mambafoley/ssm.hpp"
#include "support.hpp"

using namespace mambafoley;
using mambafoley::testing::Dual;
using mambafoley::testing::finite_difference;
using mambafoley::testing::norm_rel_error;
using mambafoley::testing::random_matrix;
using mambafoley::testing::random_scan;

namespace {

ContinuousSsm<double> scalar_ssm(double a, double b) {
  ContinuousSsm<double> s;
  s.A = Eigen::MatrixXd::Constant(1, 1, a);
  s.B = Eigen::MatrixXd::Constant(1, 1, b);
  s.C = Eigen::MatrixXd::Constant(1, 1, 1.0);
  return s;
}

DiscreteLtiSsm<double> scalar_discrete(double abar, double bbar, double c) {
  DiscreteLtiSsm<double> s;
  s.Abar = Eigen::MatrixXd::Constant(1, 1, abar);
  s.Bbar = Eigen::MatrixXd::Constant(1, 1, bbar);
  s.C = Eigen::MatrixXd::Constant(1, 1, c);
  return s;
}

Eigen::MatrixXd column(std::initializer_list<double> values) {
  Eigen::MatrixXd m(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

}  // namespace

TEST(Zoh, ClosedFormExamples) {
  auto d1 = discretize_zoh(scalar_ssm(-1.0, 1.0), std::log(2.0));
  EXPECT_NEAR(d1.Abar(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(d1.Bbar(0, 0), 0.5, 1e-12);

  auto d2 = discretize_zoh(scalar_ssm(0.0, 2.0), 0.25);
  EXPECT_EQ(d2.Abar(0, 0), 1.0);
  EXPECT_NEAR(d2.Bbar(0, 0), 0.5, 1e-15);

  auto d3 = discretize_zoh(scalar_ssm(-2.0, 3.0), 0.5);
  EXPECT_NEAR(d3.Abar(0, 0), 0.367879, 5e-7);
  EXPECT_NEAR(d3.Bbar(0, 0), 0.948181, 5e-7);
}

TEST(Zoh, RejectsNonPositiveStep) {
  EXPECT_THROW(discretize_zoh(scalar_ssm(-1.0, 1.0), 0.0), std::invalid_argument);
  EXPECT_THROW(discretize_zoh(scalar_ssm(-1.0, 1.0), -0.1), std::invalid_argument);
}

TEST(Zoh, SeriesBranchIsContinuous) {
  const double delta = 0.3;
  for (double a : {-1e-5, -3.4e-6, -3.3e-6, 3.3e-6, 3.4e-6, 1e-5}) {
    const double exact = std::expm1(delta * a) / a;
    EXPECT_NEAR(zoh_input_gain(delta, a), exact, 1e-12 * exact) << "a=" << a;
  }
}

TEST(Zoh, GainDerivativeMatchesFiniteDifferences) {
  for (double delta : {0.01, 0.2, 1.5}) {
    for (double a : {-8.0, -1.0, -0.3, -0.05, -1e-3, 0.2}) {
      const double h = 1e-6;
      const double fd = (zoh_input_gain(delta, a + h) - zoh_input_gain(delta, a - h)) / (2 * h);
      EXPECT_NEAR(zoh_input_gain_grad_a(delta, a), fd, 1e-7 * std::max(1.0, std::abs(fd)))
          << "delta=" << delta << " a=" << a;
    }
  }
}

TEST(Recurrence, Examples) {
  auto y1 = ssm_recurrence(scalar_discrete(0.0, 2.0, 3.0), column({1, 0, 1}));
  EXPECT_EQ(y1, column({6, 0, 6}));
  auto y2 = ssm_recurrence(scalar_discrete(1.0, 1.0, 1.0), column({1, 1, 1}));
  EXPECT_EQ(y2, column({1, 2, 3}));
  auto y3 = ssm_recurrence(scalar_discrete(0.5, 1.0, 1.0), Eigen::MatrixXd(0, 1));
  EXPECT_EQ(y3.rows(), 0);
}

TEST(Kernel, Examples) {
  auto k1 = ssm_kernel_lti(scalar_discrete(0.5, 1.0, 1.0), 3);
  EXPECT_EQ(k1.taps, column({1.0, 0.5, 0.25}));

  DiscreteLtiSsm<double> s;
  s.Abar = Eigen::MatrixXd(1, 2);
  s.Abar << 0.5, 0.0;
  s.Bbar = Eigen::MatrixXd::Ones(1, 2);
  s.C = Eigen::MatrixXd::Ones(1, 2);
  EXPECT_EQ(ssm_kernel_lti(s, 2).taps, column({2.0, 0.5}));

  auto single = ssm_kernel_lti(scalar_discrete(0.7, 1.5, 2.0), 1);
  EXPECT_EQ(single.taps(0, 0), 3.0);
  EXPECT_THROW(ssm_kernel_lti(s, 0), std::invalid_argument);
}

TEST(Kernel, ConvolutionExamples) {
  SsmKernelVector<double> identity{column({1, 0, 0})};
  const Eigen::MatrixXd u = column({0.3, -2.0, 5.0});
  EXPECT_EQ(ssm_conv_apply(identity, u), u);
  SsmKernelVector<double> decay{column({1, 0.5, 0.25})};
  EXPECT_EQ(ssm_conv_apply(decay, column({1, 0, 0})), column({1, 0.5, 0.25}));
  EXPECT_THROW(ssm_conv_apply(decay, column({1, 0})), std::invalid_argument);
}

TEST(Kernel, ConvolutionMatchesRecurrence) {
  Rng rng(11);
  ContinuousSsm<double> c;
  c.A = -random_matrix(1, 4, rng, 0.1, 3.0);
  c.B = random_matrix(1, 4, rng);
  c.C = random_matrix(1, 4, rng);
  const auto d = discretize_zoh(c, 0.1);
  const Eigen::MatrixXd u = random_matrix(1024, 1, rng);
  EXPECT_LT(norm_rel_error(ssm_conv_apply(ssm_kernel_lti(d, 1024), u), ssm_recurrence(d, u)), 1e-6);
}

TEST(SelectiveScan, HandUnrolledExample) {
  SelectiveScanInputs<double> in;
  in.u = column({1, 1});
  in.delta = column({std::log(2.0), std::log(2.0)});
  in.A = Eigen::MatrixXd::Constant(1, 1, -1.0);
  in.B = column({1, 1});
  in.C = column({1, 2});
  const Eigen::MatrixXd expected = column({0.5, 1.5});
  EXPECT_LT((selective_scan_sequential(in) - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((selective_scan_parallel(in) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SelectiveScan, ConstantParametersReduceToLti) {
  Rng rng(3);
  const Index T = 200, D = 3;
  ContinuousSsm<double> c;
  c.A = -random_matrix(1, D, rng, 0.2, 2.0);
  c.B = random_matrix(1, D, rng);
  c.C = random_matrix(1, D, rng);
  const double delta = 0.37;
  SelectiveScanInputs<double> in;
  in.u = random_matrix(T, 1, rng);
  in.delta = Eigen::MatrixXd::Constant(T, 1, delta);
  in.A = c.A;
  in.B = c.B.replicate(T, 1);
  in.C = c.C.replicate(T, 1);
  const Eigen::MatrixXd lti = ssm_recurrence(discretize_zoh(c, delta), in.u);
  EXPECT_LT(norm_rel_error(selective_scan_sequential(in), lti), 1e-12);
  EXPECT_LT(norm_rel_error(selective_scan_parallel(in), lti), 1e-12);
}

TEST(SelectiveScan, ZeroInputGivesZeroOutput) {
  Rng rng(4);
  auto in = random_scan(50, 3, 4, rng);
  in.u.setZero();
  EXPECT_TRUE(selective_scan_parallel(in).isZero(0.0));
  EXPECT_TRUE(selective_scan_sequential(in).isZero(0.0));
}

TEST(SelectiveScan, ParallelMatchesSequential) {
  Rng rng(5);
  for (Index T : {1, 2, 7, 64, 65, 4097, 16384}) {
    const auto in = random_scan(T, 2, 4, rng);
    const Eigen::MatrixXd seq = selective_scan_sequential(in);
    EXPECT_LT(norm_rel_error(selective_scan_parallel(in), seq), 1e-5) << "T=" << T;
    EXPECT_LT(norm_rel_error(selective_scan_parallel(in, 3), seq), 1e-5) << "T=" << T;
  }
  const auto one = random_scan(1, 2, 4, rng);
  EXPECT_EQ(selective_scan_parallel(one), selective_scan_sequential(one));
}

TEST(SelectiveScan, ParallelIsRunToRunIdentical) {
  Rng rng(6);
  const auto in = random_scan(3000, 2, 4, rng);
  EXPECT_EQ(selective_scan_parallel(in), selective_scan_parallel(in));
}

TEST(SelectiveScan, ShapeValidation) {
  Rng rng(7);
  auto in = random_scan(10, 2, 3, rng);
  auto bad = in;
  bad.B = random_matrix(9, 3, rng);
  EXPECT_THROW(selective_scan_parallel(bad), std::invalid_argument);
  bad = in;
  bad.delta(0, 0) = -0.1;
  EXPECT_THROW(selective_scan_sequential(bad), std::invalid_argument);
  EXPECT_THROW(selective_scan_backward(in, Eigen::MatrixXd(Eigen::MatrixXd::Zero(10, 3))), std::invalid_argument);
}

TEST(SelectiveScan, Causality) {
  Rng rng(8);
  const auto in = random_scan(300, 2, 4, rng);
  const Eigen::MatrixXd y = selective_scan_parallel(in);
  for (Index t : {0, 64, 150, 299}) {
    auto perturbed = in;
    perturbed.u(t, 1) += 1.0;
    perturbed.B(t, 2) += 1.0;
    perturbed.delta(t, 0) += 0.1;
    const Eigen::MatrixXd yp = selective_scan_parallel(perturbed);
    EXPECT_EQ(yp.topRows(t), y.topRows(t)) << "t=" << t;
    EXPECT_NE(yp.row(t), y.row(t));
  }
}

TEST(SelectiveScan, LinearInInput) {
  Rng rng(9);
  auto in1 = random_scan(500, 3, 4, rng);
  auto in2 = in1;
  in2.u = random_matrix(500, 3, rng);
  auto mix = in1;
  mix.u = 0.7 * in1.u - 1.3 * in2.u;
  const Eigen::MatrixXd expected = 0.7 * selective_scan_parallel(in1) - 1.3 * selective_scan_parallel(in2);
  EXPECT_LT(norm_rel_error(selective_scan_parallel(mix), expected), 1e-6);
}

TEST(SelectiveScan, StableOverLongSequences) {
  Rng rng(10);
  const auto in = random_scan(100000, 1, 16, rng);
  const Eigen::MatrixXd y = selective_scan_parallel(in);
  EXPECT_TRUE(y.allFinite());
  // |h| <= max|Bbar u| / (1 - max Abar) per state, so |y| is bounded by the sum over states
  double bound = 0.0;
  for (Index d = 0; d < 16; ++d) {
    const double a = in.A(0, d);
    const double amax = std::exp(in.delta.minCoeff() * a);
    const double bmax = zoh_input_gain(in.delta.maxCoeff(), a) * in.B.col(d).cwiseAbs().maxCoeff();
    bound += in.C.col(d).cwiseAbs().maxCoeff() * bmax / (1.0 - amax);
  }
  EXPECT_LE(y.cwiseAbs().maxCoeff(), bound * in.u.cwiseAbs().maxCoeff());
}

TEST(ScanBackward, ZeroCotangentGivesZeroGradients) {
  Rng rng(12);
  const auto in = random_scan(20, 2, 3, rng);
  const auto g = selective_scan_backward(in, Eigen::MatrixXd(Eigen::MatrixXd::Zero(20, 2)));
  EXPECT_TRUE(g.u.isZero(0.0) && g.delta.isZero(0.0) && g.A.isZero(0.0) && g.B.isZero(0.0) && g.C.isZero(0.0));
}

TEST(ScanBackward, MemorylessCase) {
  // very negative A makes Abar underflow to zero
  Rng rng(13);
  auto in = random_scan(6, 1, 2, rng);
  in.A.setConstant(-1e4);
  in.delta.setConstant(1.0);
  for (Index t = 0; t < 6; ++t) {
    Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(6, 1);
    dy(t, 0) = 1.0;
    const auto g = selective_scan_backward(in, dy);
    for (Index s = 0; s < 6; ++s) {
      double expected = 0.0;
      if (s == t) {
        for (Index d = 0; d < 2; ++d) expected += in.C(t, d) * zoh_input_gain(1.0, -1e4) * in.B(t, d);
      }
      EXPECT_NEAR(g.u(s, 0), expected, 1e-15);
    }
  }
}

TEST(ScanBackward, DotProductAgainstForwardMode) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Index T = 40 + 7 * trial, E = 3, D = 4;
    const auto in = random_scan(T, E, D, rng);
    const Eigen::MatrixXd vu = random_matrix(T, E, rng), vdelta = random_matrix(T, E, rng),
                          vA = random_matrix(E, D, rng), vB = random_matrix(T, D, rng),
                          vC = random_matrix(T, D, rng);
    const Eigen::MatrixXd w = random_matrix(T, E, rng);

    auto dual = [](const Eigen::MatrixXd& v, const Eigen::MatrixXd& d) {
      Matrix<Dual> m(v.rows(), v.cols());
      for (Index i = 0; i < v.size(); ++i) m.data()[i] = Dual(v.data()[i], d.data()[i]);
      return m;
    };
    SelectiveScanInputs<Dual> din{dual(in.u, vu), dual(in.delta, vdelta), dual(in.A, vA), dual(in.B, vB),
                                  dual(in.C, vC)};
    const Matrix<Dual> y = selective_scan_sequential(din);
    double lhs = 0.0;
    for (Index i = 0; i < y.size(); ++i) lhs += y.data()[i].d * w.data()[i];

    const auto g = selective_scan_backward(in, w);
    const double rhs = (g.u.cwiseProduct(vu).sum() + g.delta.cwiseProduct(vdelta).sum() +
                        g.A.cwiseProduct(vA).sum() + g.B.cwiseProduct(vB).sum() + g.C.cwiseProduct(vC).sum());
    EXPECT_NEAR(lhs, rhs, 1e-6 * std::abs(lhs)) << "trial " << trial;
  }
}

TEST(ScanBackward, FiniteDifferencesAllCotangents) {
  Rng rng(15);
  auto in = random_scan(16, 2, 2, rng);
  const Eigen::MatrixXd w = random_matrix(16, 2, rng);
  const auto g = selective_scan_backward(in, w);
  auto loss = [&]() { return selective_scan_sequential(in).cwiseProduct(w).sum(); };
  EXPECT_LT(norm_rel_error(g.u, finite_difference(loss, in.u)), 1e-3);
  EXPECT_LT(norm_rel_error(g.delta, finite_difference(loss, in.delta)), 1e-3);
  EXPECT_LT(norm_rel_error(g.A, finite_difference(loss, in.A)), 1e-3);
  EXPECT_LT(norm_rel_error(g.B, finite_difference(loss, in.B)), 1e-3);
  EXPECT_LT(norm_rel_error(g.C, finite_difference(loss, in.C)), 1e-3);
}

TEST(ScanBackward, SegmentRecomputationMatchesFullStorage) {
  Rng rng(16);
  const auto in = random_scan(1000, 2, 3, rng);
  const Eigen::MatrixXd w = random_matrix(1000, 2, rng);
  const auto full = selective_scan_backward(in, w);
  for (Index segment : {1, 37, 256, 999}) {
    const auto seg = selective_scan_backward(in, w, segment);
    EXPECT_LT(norm_rel_error(seg.u, full.u), 1e-12);
    EXPECT_LT(norm_rel_error(seg.delta, full.delta), 1e-12);
    EXPECT_LT(norm_rel_error(seg.A, full.A), 1e-12);
    EXPECT_LT(norm_rel_error(seg.B, full.B), 1e-12);
    EXPECT_LT(norm_rel_error(seg.C, full.C), 1e-12);
  }
}

TEST(ScanBackward, LongSequenceUsesRecomputationConsistently) {
  Rng rng(17);
  const auto in = random_scan(kFullStorageMaxLength + 500, 1, 2, rng);
  const Eigen::MatrixXd w = random_matrix(in.length(), 1, rng);
  const auto automatic = selective_scan_backward(in, w);
  const auto stored = selective_scan_backward(in, w, in.length());
  EXPECT_LT(norm_rel_error(automatic.A, stored.A), 1e-12);
  EXPECT_LT(norm_rel_error(automatic.u, stored.u), 1e-12);
}
