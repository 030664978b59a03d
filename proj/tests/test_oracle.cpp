#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "svgl/datagen.hpp"
#include "svgl/error.hpp"
#include "svgl/oracle.hpp"

using namespace svgl;

namespace {

MixtureSpec single(std::vector<double> mean, double var) {
  MixtureSpec s;
  s.components.push_back({1.0, std::move(mean), var, 0});
  return s;
}

MixtureSpec two_bumps_1d() {
  MixtureSpec s;
  s.components.push_back({0.3, {-2.0}, 0.25, 0});
  s.components.push_back({0.7, {1.5}, 0.5, 1});
  return s;
}

// E[eps - x0 | x_t = x] by direct quadrature over x0 for a 1-d mixture.
double quadrature_velocity(const MixtureSpec& spec, double x, double t) {
  const double a = 1.0 - t;
  double num = 0.0, den = 0.0;
  const double lo = -12.0, hi = 12.0;
  const int n = 200000;
  const double h = (hi - lo) / n;
  for (int i = 0; i <= n; ++i) {
    const double x0 = lo + i * h;
    double prior = 0.0;
    for (const auto& c : spec.components) {
      const double z = x0 - c.mean[0];
      prior += c.weight * std::exp(-0.5 * z * z / c.var) / std::sqrt(2.0 * std::numbers::pi * c.var);
    }
    const double r = x - a * x0;
    const double like = std::exp(-0.5 * r * r / (t * t));
    const double w = (i == 0 || i == n ? 0.5 : 1.0) * prior * like;
    num += w * (x - x0) / t;
    den += w;
  }
  return num / den;
}

}  // namespace

TEST(OracleVelocity, StandardNormalAtHalfIsZero) {
  const MixtureSpec s = single({0.0, 0.0}, 1.0);
  const Tensor v = oracle_velocity(s, Tensor::matrix({{1.3, -0.4}, {-2.0, 5.0}}), 0.5);
  for (double x : v.values()) EXPECT_NEAR(x, 0.0, 1e-14);
}

TEST(OracleVelocity, SingleGaussianClosedForm) {
  const MixtureSpec s = single({2.0, -1.0}, 0.25);
  const double t = 0.3, a = 0.7;
  const std::vector<double> x = {0.4, 0.9};
  const Tensor v = oracle_velocity(s, Tensor::vector(x), t);
  const double gain = a * 0.25 / (a * a * 0.25 + t * t);
  const double mu[2] = {2.0, -1.0};
  for (int j = 0; j < 2; ++j) {
    const double post = mu[j] + gain * (x[j] - a * mu[j]);
    EXPECT_NEAR(v[j], (x[j] - post) / t, 1e-12);
  }
}

TEST(OracleVelocity, PointMassLimit) {
  const MixtureSpec s = single({1.0, -3.0}, 1e-12);
  const Tensor v = oracle_velocity(s, Tensor::vector({0.5, 0.5}), 0.25);
  EXPECT_NEAR(v[0], (0.5 - 1.0) / 0.25, 1e-8);
  EXPECT_NEAR(v[1], (0.5 + 3.0) / 0.25, 1e-8);
}

TEST(OracleVelocity, MatchesQuadratureOnMixture) {
  const MixtureSpec s = two_bumps_1d();
  for (double t : {0.1, 0.4, 0.8}) {
    for (double x : {-2.5, -0.3, 0.0, 1.1, 3.0}) {
      const Tensor v = oracle_velocity(s, Tensor::vector({x}), t);
      EXPECT_NEAR(v[0], quadrature_velocity(s, x, t), 1e-6) << "x=" << x << " t=" << t;
    }
  }
}

TEST(OracleVelocity, SymmetricLayoutVanishesAtOrigin) {
  for (auto preset : {MixturePreset::dispersed, MixturePreset::entangled}) {
    const MixtureSpec s = make_mixture(preset, 2, 0);
    for (double t : {0.2, 0.5, 0.9}) {
      const Tensor v = oracle_velocity(s, Tensor::vector({0.0, 0.0}), t);
      EXPECT_NEAR(v[0], 0.0, 1e-12);
      EXPECT_NEAR(v[1], 0.0, 1e-12);
    }
  }
}

TEST(OracleVelocity, RejectsBadInputs) {
  const MixtureSpec s = single({0.0, 0.0}, 1.0);
  EXPECT_THROW(oracle_velocity(s, Tensor::vector({0.0, 0.0}), 0.0), ConfigError);
  EXPECT_THROW(oracle_velocity(s, Tensor::vector({0.0, 0.0}), 1.0), ConfigError);
  EXPECT_THROW(oracle_velocity(s, Tensor::vector({0.0, 0.0, 0.0}), 0.5), ShapeError);
}

TEST(MonteCarlo, AgreesWithOracle) {
  const MixtureSpec s = make_mixture(MixturePreset::dispersed, 2, 0);
  const Tensor x = Tensor::vector({1.2, -0.7});
  const Tensor exact = oracle_velocity(s, x, 0.5);
  const Tensor mc = mc_velocity(s, x, 0.5, 200000, 3);
  EXPECT_NEAR(mc[0], exact[0], 0.03 * std::hypot(exact[0], exact[1]));
  EXPECT_NEAR(mc[1], exact[1], 0.03 * std::hypot(exact[0], exact[1]));
}

TEST(MonteCarlo, VarianceScalesInverselyWithDraws) {
  const MixtureSpec s = two_bumps_1d();
  const Tensor x = Tensor::vector({0.5});
  auto variance = [&](std::size_t n) {
    double m = 0.0, m2 = 0.0;
    const int reps = 40;
    for (int r = 0; r < reps; ++r) {
      const double v = mc_velocity(s, x, 0.5, n, 100 + r)[0];
      m += v;
      m2 += v * v;
    }
    m /= reps;
    return (m2 / reps - m * m) * reps / (reps - 1);
  };
  const double ratio = variance(2000) / variance(8000);
  EXPECT_GT(ratio, 2.0);
  EXPECT_LT(ratio, 8.0);
}

TEST(MonteCarlo, RejectsSmallBudgetsAndCollapsedWeights) {
  const MixtureSpec s = single({0.0}, 1.0);
  EXPECT_THROW(mc_velocity(s, Tensor::vector({0.0}), 0.5, 10, 0), ConfigError);
  EXPECT_THROW(mc_velocity(single({0.0}, 1e-6), Tensor::vector({0.01}), 1e-4, 1000, 0), NumericError);
}

TEST(OracleSampling, RecoversSingleGaussianMoments) {
  const MixtureSpec s = single({2.0, -1.0}, 0.25);
  Rng rng(5);
  const Tensor z = normal_tensor({4000, 2}, rng);
  const Tensor x = oracle_sample(s, z, 50);
  double m0 = 0.0, m1 = 0.0, v0 = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    m0 += x.at(i, 0);
    m1 += x.at(i, 1);
  }
  m0 /= 4000;
  m1 /= 4000;
  for (std::size_t i = 0; i < x.rows(); ++i) v0 += (x.at(i, 0) - m0) * (x.at(i, 0) - m0);
  v0 /= 3999;
  EXPECT_NEAR(m0, 2.0, 0.05);
  EXPECT_NEAR(m1, -1.0, 0.05);
  EXPECT_NEAR(v0, 0.25, 0.03);
}

TEST(OracleSampling, ManyStepsReachNoiseFloor) {
  const MixtureSpec s = make_mixture(MixturePreset::entangled, 2, 0);
  Rng rng(6);
  const Tensor z = normal_tensor({4000, 2}, rng);
  const Tensor x = oracle_sample(s, z, 100);
  const LabeledPoints ref = sample_mixture(s, 4000, 77);
  const NoiseFloor floor = sw2_noise_floor(s, 4000, 5, 64, 8);
  EXPECT_LT(sliced_wasserstein(x, ref.points, 64, 9), floor.mean + 3.0 * floor.stddev + 0.02);
  const Tensor coarse = oracle_sample(s, z, 3);
  EXPECT_GT(sliced_wasserstein(coarse, ref.points, 64, 9), sliced_wasserstein(x, ref.points, 64, 9));
}

TEST(OracleField, ClassConditionalRowsUseTheirClass) {
  const MixtureSpec s = make_mixture(MixturePreset::dispersed, 2, 0);
  const VelocityField f = oracle_field(s, true);
  const Tensor x = Tensor::matrix({{0.3, 0.2}, {0.3, 0.2}, {0.3, 0.2}});
  const std::vector<int> cls = {0, 1, -1};
  const Tensor v = f(x, 0.5, cls);
  const Tensor v0 = oracle_velocity(s.class_conditional(0), Tensor::vector({0.3, 0.2}), 0.5);
  const Tensor v1 = oracle_velocity(s.class_conditional(1), Tensor::vector({0.3, 0.2}), 0.5);
  const Tensor vp = oracle_velocity(s, Tensor::vector({0.3, 0.2}), 0.5);
  EXPECT_EQ(v[0], v0[0]);
  EXPECT_EQ(v[3], v1[1]);
  EXPECT_EQ(v[4], vp[0]);
  EXPECT_NO_THROW(f(x, 0.0, cls));
  EXPECT_NO_THROW(f(x, 1.0, cls));
}

TEST(SlicedWasserstein, IdenticalAndShiftedSets) {
  Rng rng(1);
  const Tensor a = normal_tensor({500, 2}, rng);
  EXPECT_EQ(sliced_wasserstein(a, a, 32, 0), 0.0);
  Tensor b = a;
  for (std::size_t i = 0; i < b.rows(); ++i) b.at(i, 0) += 1.0;
  EXPECT_NEAR(sliced_wasserstein(a, b, 4000, 2), 2.0 / std::numbers::pi, 0.02);
  EXPECT_EQ(sliced_wasserstein(a, b, 32, 5), sliced_wasserstein(b, a, 32, 5));
  EXPECT_THROW(sliced_wasserstein(a, Tensor({3, 3}, 0.0), 8, 0), ShapeError);
  EXPECT_THROW(sliced_wasserstein(a, b, 0, 0), ConfigError);
}

TEST(Mmd, BasicProperties) {
  Rng rng(2);
  const Tensor a = normal_tensor({200, 2}, rng);
  const Tensor b = normal_tensor({200, 2}, rng);
  Tensor c = b;
  for (double& v : c.values()) v += 2.0;
  EXPECT_EQ(mmd(a, a, 1.0), 0.0);
  EXPECT_GE(mmd(a, b, 1.0), 0.0);
  EXPECT_LT(mmd(a, b, 1.0), 0.02);
  EXPECT_GT(mmd(a, c, 1.0), 0.3);
  EXPECT_NEAR(mmd(a, c, 1.0), mmd(c, a, 1.0), 1e-12);
  EXPECT_THROW(mmd(a, c, 0.0), ConfigError);
}

TEST(NoiseFloor, SummaryAndBound) {
  const NoiseFloor f = summarize_floor({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(f.mean, 2.0);
  EXPECT_DOUBLE_EQ(f.stddev, 1.0);
  EXPECT_DOUBLE_EQ(f.bound(), 5.0);
  const MixtureSpec s = make_mixture(MixturePreset::dispersed, 2, 0);
  const NoiseFloor a = sw2_noise_floor(s, 1000, 4, 32, 3);
  const NoiseFloor b = sw2_noise_floor(s, 4000, 4, 32, 3);
  ASSERT_EQ(a.draws.size(), 4u);
  EXPECT_GT(a.mean, 0.0);
  EXPECT_LT(b.mean, a.mean);
}
