#include <gtest/gtest.h>

#include "svgl/error.hpp"
#include "test_util.hpp"
#include "svgl/interpolant.hpp"

using namespace svgl;

namespace {

TrainableField constant_field(const Tensor& value) {
  return [value](const Tensor& xt, std::span<const double>, std::span<const int>) {
    Tensor out(xt.shape(), 0.0);
    for (std::size_t r = 0; r < xt.rows(); ++r) {
      for (std::size_t c = 0; c < xt.cols(); ++c) out.at(r, c) = value[c];
    }
    return FieldPass{out, [](const Tensor&) { return Gradients{}; }};
  };
}

}  // namespace

TEST(Interpolant, BoundaryValues) {
  const Interpolant in;
  EXPECT_EQ(in.alpha(0), 1.0);
  EXPECT_EQ(in.sigma(0), 0.0);
  EXPECT_EQ(in.alpha(1), 0.0);
  EXPECT_EQ(in.sigma(1), 1.0);
  for (double t = 0.0; t < 1.0; t += 0.1) {
    EXPECT_GT(in.alpha(t), in.alpha(t + 0.1));
    EXPECT_LT(in.sigma(t), in.sigma(t + 0.1));
  }
}

TEST(Corrupt, EndpointsAndExample) {
  const Interpolant in;
  const Tensor x0 = Tensor::vector({4, 0});
  const Tensor eps = Tensor::vector({0, 4});
  EXPECT_EQ(corrupt(in, x0, eps, 0.0), x0);
  EXPECT_EQ(corrupt(in, x0, eps, 1.0), eps);
  const Tensor mid = corrupt(in, x0, eps, 0.25);
  EXPECT_DOUBLE_EQ(mid[0], 3.0);
  EXPECT_DOUBLE_EQ(mid[1], 1.0);
}

TEST(Corrupt, Errors) {
  const Interpolant in;
  EXPECT_THROW(corrupt(in, Tensor::vector({1, 2}), Tensor::vector({1}), 0.5), ShapeError);
  EXPECT_THROW(corrupt(in, Tensor::vector({1}), Tensor::vector({1}), 1.5), ConfigError);
  EXPECT_THROW(corrupt(in, Tensor::vector({1}), Tensor::vector({1}), -0.1), ConfigError);
}

TEST(Corrupt, AffineInInputs) {
  const Interpolant in;
  const Tensor x0 = Tensor::vector({1.5, -2});
  const Tensor eps = Tensor::vector({0.3, 0.7});
  const Tensor a = corrupt(in, Tensor::vector({3.0, -4}), Tensor::vector({0.6, 1.4}), 0.3);
  const Tensor b = corrupt(in, x0, eps, 0.3);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a[i], 2.0 * b[i], 1e-15);
}

TEST(VelocityTarget, Examples) {
  const Tensor x = Tensor::vector({0.5, -1});
  const Tensor zero = velocity_target(x, x);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(svgl::testing::values_of(velocity_target(Tensor::vector({1, 1}), Tensor::vector({0, 0}))), (std::vector<double>{-1, -1}));
  EXPECT_THROW(velocity_target(Tensor::vector({1}), Tensor::vector({1, 2})), ShapeError);
}

TEST(VelocityTarget, FiniteDifferenceOfPath) {
  const Interpolant in;
  const Tensor x0 = Tensor::vector({1.2, -0.4, 3});
  const Tensor eps = Tensor::vector({-0.5, 0.9, 0.1});
  const double t = 0.37, h = 0.125;
  const Tensor a = corrupt(in, x0, eps, t), b = corrupt(in, x0, eps, t + h);
  const Tensor v = velocity_target(in, x0, eps, t);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR((b[i] - a[i]) / h, v[i], 1e-13);
}

TEST(NoiseSample, Consistency) {
  const Interpolant in;
  Rng rng(3);
  const NoiseSample s = draw_noise_sample(in, Tensor::vector({1, 2}), 0.4, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(s.xt[i], 0.6 * s.x0[i] + 0.4 * s.eps[i], 1e-15);
    EXPECT_DOUBLE_EQ(s.v[i], s.eps[i] - s.x0[i]);
  }
}

TEST(FmLoss, ZeroModelMatchesSquaredTarget) {
  Tensor seen_xt;
  double seen_t = 0.0;
  TrainableField zero = [&](const Tensor& xt, std::span<const double> t, std::span<const int>) {
    seen_xt = xt;
    seen_t = t[0];
    return FieldPass{Tensor(xt.shape(), 0.0), [](const Tensor&) { return Gradients{}; }};
  };
  TrainingBatch batch{Tensor({1, 2}, std::vector<double>{1, 0}), {0}};
  Rng rng(9);
  const LossResult r = fm_loss(zero, batch, Interpolant{}, unit_weighting, rng);
  EXPECT_EQ(r.t[0], seen_t);
  const double e0 = (seen_xt[0] - (1 - seen_t) * 1.0) / seen_t;
  const double e1 = seen_xt[1] / seen_t;
  EXPECT_NEAR(r.loss, (e0 - 1) * (e0 - 1) + e1 * e1, 1e-9);
}

TEST(FmLoss, OracleModelHasZeroLoss) {
  TrainingBatch batch{Tensor({1, 2}, std::vector<double>{1, 0}), {0}};
  Rng probe(5);
  sample_t(probe);
  const Tensor eps = normal_tensor({1, 2}, probe);
  const Tensor target = Tensor::vector({eps[0] - 1.0, eps[1]});
  Rng rng(5);
  const LossResult r = fm_loss(constant_field(target), batch, Interpolant{}, unit_weighting, rng);
  EXPECT_NEAR(r.loss, 0.0, 1e-24);
}

TEST(FmLoss, WeightingScalesLinearly) {
  Rng a(1), b(1);
  TrainingBatch batch{Tensor({3, 2}, std::vector<double>{1, 0, 0, 1, -1, 2}), {0, 1, 0}};
  const auto zero = constant_field(Tensor::vector({0.2, -0.1}));
  const LossResult r1 = fm_loss(zero, batch, Interpolant{}, unit_weighting, a);
  const LossResult r2 = fm_loss(zero, batch, Interpolant{}, [](double) { return 2.0; }, b);
  EXPECT_NEAR(r2.loss, 2.0 * r1.loss, 1e-12);
  EXPECT_GE(r1.loss, 0.0);
}

TEST(FmLoss, HandExampleThroughVelocityTarget) {
  const Tensor v = velocity_target(Tensor::vector({1, 0}), Tensor::vector({0, 1}));
  EXPECT_DOUBLE_EQ(v[0] * v[0] + v[1] * v[1], 2.0);
}

TEST(FmLoss, NonFiniteLossThrows) {
  TrainingBatch batch{Tensor({1, 2}, std::vector<double>{1, 0}), {0}};
  Rng rng(0);
  EXPECT_THROW(fm_loss(constant_field(Tensor::vector({NAN, 0})), batch, Interpolant{}, unit_weighting, rng),
               NumericError);
}

TEST(EpsLoss, ZeroModelAndCopyModel) {
  TrainingBatch batch{Tensor({1, 2}, std::vector<double>{0.3, 0.1}), {0}};
  Rng probe(2);
  sample_t(probe);
  const Tensor eps = normal_tensor({1, 2}, probe);
  Rng rng(2);
  const LossResult r = eps_loss(constant_field(Tensor::vector({0, 0})), batch, Interpolant{}, unit_weighting, rng);
  EXPECT_NEAR(r.loss, eps[0] * eps[0] + eps[1] * eps[1], 1e-12);
}

TEST(SampleT, UniformStatistics) {
  Rng rng(11);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_t(rng);
    ASSERT_GE(t, 0.0);
    ASSERT_LE(t, 1.0);
    sum += t;
  }
  EXPECT_GE(sum / n, 0.49);
  EXPECT_LE(sum / n, 0.51);
  Rng a(4), b(4);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_t(a), sample_t(b));
}
