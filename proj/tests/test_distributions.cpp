// Copyright 2026 The deskvae Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "support.hpp"

namespace deskvae {
namespace {

using testing::max_fd_error;
using testing::random_tensor;
using testing::relative_error;

constexpr double kLn2 = std::numbers::ln2;

// ---------------------------------------------------------------------------
// Smoothed softplus.

TEST(SmoothedSoftplus, ZeroInputWithLn2BetaIsOne) { EXPECT_EQ(smoothed_softplus(0.0, kLn2), 1.0); }

TEST(SmoothedSoftplus, ZeroInputWithUnitBetaIsLn2) { EXPECT_NEAR(smoothed_softplus(0.0, 1.0), kLn2, 1e-15); }

TEST(SmoothedSoftplus, LargeInputIsAsymptoticallyLinear) {
  // log1p(exp(-30)) is about 9.4e-14.
  EXPECT_NEAR(smoothed_softplus(30.0, 1.0), 30.0, 1e-9);
  EXPECT_NEAR(smoothed_softplus(800.0, kLn2), 800.0, 1e-9);
  EXPECT_TRUE(std::isfinite(smoothed_softplus(1e6, kLn2)));
}

TEST(SmoothedSoftplus, RejectsNonPositiveBeta) {
  EXPECT_THROW(smoothed_softplus(1.0, 0.0), ConfigError);
  EXPECT_THROW(smoothed_softplus(1.0, -0.5), ConfigError);
  EXPECT_THROW(ScaleTransform::smoothed(0.0), ConfigError);
}

TEST(SmoothedSoftplus, SigmaPositiveMonotoneWithBoundedSlope) {
  double previous = 0.0;
  for (double y = -50.0; y <= 50.0; y += 0.01) {
    const double s = smoothed_softplus(y, kLn2);
    const double g = smoothed_softplus_grad(y, kLn2);
    ASSERT_GT(s, 0.0) << y;
    ASSERT_GT(s, previous) << y;
    ASSERT_GT(g, 0.0) << y;
    ASSERT_LT(g, 1.0) << y;
    previous = s;
  }
}

TEST(SmoothedSoftplus, GradientMatchesFiniteDifferences) {
  for (double beta : {kLn2, 1.0, 0.1})
    for (double y : {-8.0, -1.3, 0.0, 0.7, 5.0})
      EXPECT_LT(relative_error(smoothed_softplus_grad(y, beta),
                               testing::central_difference([&](double v) { return smoothed_softplus(v, beta); }, y)),
                1e-4);
}

TEST(SmoothedSoftplus, LogFormIsStableForVeryNegativeInputs) {
  EXPECT_NEAR(log_smoothed_softplus(-2000.0, kLn2), -2000.0 * kLn2 - std::log(kLn2), 1e-9);
  EXPECT_NEAR(log_smoothed_softplus(1.0, kLn2), std::log(smoothed_softplus(1.0, kLn2)), 1e-14);
}

// ---------------------------------------------------------------------------
// Gaussian KL.

TEST(GaussianKl, IdenticalStandardNormalsGiveZero) { EXPECT_EQ(gaussian_kl(0.0, 1.0, 0.0, 1.0), 0.0); }

TEST(GaussianKl, UnitShiftGivesHalf) { EXPECT_NEAR(gaussian_kl(1.0, 1.0, 0.0, 1.0), 0.5, 1e-15); }

TEST(GaussianKl, MatchesIndependentClosedForm) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double qm = rng.normal(), pm = rng.normal();
    const double qs = std::exp(rng.normal()), ps = std::exp(rng.normal());
    const double oracle = std::log(ps / qs) + (qs * qs + (qm - pm) * (qm - pm)) / (2 * ps * ps) - 0.5;
    EXPECT_NEAR(gaussian_kl(qm, qs, pm, ps), oracle, 1e-12);
  }
}

TEST(GaussianKl, MonteCarloOracle) {
  // q = N(0.3, 0.8), p = N(0.1, 1.2) (standard deviations).
  const double qm = 0.3, qs = 0.8, pm = 0.1, ps = 1.2;
  Rng rng(20240);
  double acc = 0.0;
  const int n = 10'000'000;
  for (int i = 0; i < n; ++i) {
    const double e = rng.normal();
    const double z = qm + qs * e;
    const double dp = (z - pm) / ps;
    acc += -std::log(qs) - 0.5 * e * e + std::log(ps) + 0.5 * dp * dp;
  }
  EXPECT_NEAR(gaussian_kl(qm, qs, pm, ps), acc / n, 1e-3);
}

TEST(GaussianKl, NonNegativeAndZeroOnlyAtEquality) {
  Rng rng(11);
  const auto tf = ScaleTransform::smoothed(kLn2);
  for (int i = 0; i < 2000; ++i) {
    const double qm = 3 * rng.normal(), qr = 3 * rng.normal(), pm = 3 * rng.normal(), pr = 3 * rng.normal();
    EXPECT_GE(gaussian_kl_with_grad(qm, qr, pm, pr, tf, tf).kl, 0.0);
    EXPECT_NEAR(gaussian_kl_with_grad(qm, qr, qm, qr, tf, tf).kl, 0.0, 1e-12);
  }
}

TEST(GaussianKl, TensorFormRejectsShapeMismatch) {
  const auto tf = ScaleTransform::smoothed(kLn2);
  SmoothedGaussian q{Tensor(Shape{1, 2, 1, 1}), Tensor(Shape{1, 2, 1, 1}), tf};
  SmoothedGaussian p{Tensor(Shape{1, 3, 1, 1}), Tensor(Shape{1, 3, 1, 1}), tf};
  EXPECT_THROW(gaussian_kl(q, p), ShapeError);
}

TEST(GaussianKl, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (const auto tf : {ScaleTransform::smoothed(kLn2), ScaleTransform::exponential()})
    for (int i = 0; i < 50; ++i) {
      double v[4] = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      const auto g = gaussian_kl_with_grad(v[0], v[1], v[2], v[3], tf, tf);
      const double analytic[4] = {g.d_q_mean, g.d_q_raw, g.d_p_mean, g.d_p_raw};
      for (int k = 0; k < 4; ++k) {
        auto f = [&](double x) {
          double w[4] = {v[0], v[1], v[2], v[3]};
          w[k] = x;
          return gaussian_kl_with_grad(w[0], w[1], w[2], w[3], tf, tf).kl;
        };
        EXPECT_LT(relative_error(analytic[k], testing::central_difference(f, v[k])), 1e-4);
      }
    }
}

TEST(GaussianKl, SmoothingBoundsRawScaleGradient) {
  // Prior N(0, 1) under each parameterization: raw 0 gives sigma 1 in both.
  const auto smooth = ScaleTransform::smoothed(kLn2);
  const auto expo = ScaleTransform::exponential();
  ASSERT_NEAR(smooth.sigma(0.0), 1.0, 1e-15);
  double max_smooth = 0.0, max_exp = 0.0;
  for (double y = -20.0; y <= 0.0; y += 0.001) {
    max_smooth = std::max(max_smooth, std::abs(gaussian_kl_with_grad(0.0, y, 0.0, 0.0, smooth, smooth).d_q_raw));
    max_exp = std::max(max_exp, std::abs(gaussian_kl_with_grad(0.0, y, 0.0, 0.0, expo, expo).d_q_raw));
  }
  EXPECT_LT(max_smooth, max_exp);
}

// ---------------------------------------------------------------------------
// Gaussian sampling.

TEST(GaussianSample, ZeroTemperatureReturnsMean) {
  Rng rng(1);
  const auto tf = ScaleTransform::smoothed(kLn2);
  SmoothedGaussian d{random_tensor(Shape{2, 3, 4, 4}, rng), random_tensor(Shape{2, 3, 4, 4}, rng), tf};
  EXPECT_EQ(gaussian_sample(d, 0.0, rng), d.raw_mean);
}

TEST(GaussianSample, UnitTemperatureHasUnitSpread) {
  Rng rng(2);
  // Smoothed-softplus raw 0 is sigma 1.
  SmoothedGaussian d{Tensor(Shape{1, 1, 1000, 1000}), Tensor(Shape{1, 1, 1000, 1000}), ScaleTransform::smoothed(kLn2)};
  const Tensor s = gaussian_sample(d, 1.0, rng);
  double mean = 0.0, sq = 0.0;
  for (double v : s.values()) mean += v;
  mean /= s.size();
  for (double v : s.values()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (s.size() - 1));
  EXPECT_GE(sd, 0.997);
  EXPECT_LE(sd, 1.003);
}

TEST(GaussianSample, TemperatureValidation) {
  Rng rng(3);
  SmoothedGaussian d{Tensor(Shape{1, 1, 1, 1}), Tensor(Shape{1, 1, 1, 1}), ScaleTransform::smoothed(kLn2)};
  EXPECT_THROW(gaussian_sample(d, -0.1, rng), ConfigError);
  EXPECT_NO_THROW(gaussian_sample(d, 0.85, rng));
}

TEST(GaussianSample, ReparameterizedGradientsReachMeanAndScale) {
  Rng rng(4);
  const auto tf = ScaleTransform::smoothed(kLn2);
  Tensor mean = random_tensor(Shape{1, 2, 2, 2}, rng), raw = random_tensor(Shape{1, 2, 2, 2}, rng);
  const Tensor eps = random_tensor(Shape{1, 2, 2, 2}, rng);
  Var m = parameter(mean, "m"), r = parameter(raw, "r");
  Var z = gaussian_sample(m, r, eps, Tensor(Shape{}, 1.0), tf);
  backward(sum_all(z));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    EXPECT_DOUBLE_EQ(m->grad[i], 1.0);
    EXPECT_NEAR(r->grad[i], tf.dsigma(raw[i]) * eps[i], 1e-14);
  }
}

// ---------------------------------------------------------------------------
// Discretized mixture of logistics.

MoLConfig mol_config(int K, int C, int bits, bool smoothed = true, bool bounded = true) {
  MoLConfig c;
  c.mixtures = K;
  c.channels = C;
  c.num_bits = bits;
  c.smoothed = smoothed;
  c.bounded = bounded;
  return c;
}

/// Probability mass over every joint outcome of one pixel. Each outcome is
/// scored as its own pixel with tiled parameters.
double total_mass(const MoLConfig& cfg, const std::vector<double>& pixel_params) {
  const int levels = 1 << cfg.num_bits;
  int outcomes = 1;
  for (int c = 0; c < cfg.channels; ++c) outcomes *= levels;
  MoLParams p{cfg, Tensor(Shape{1, cfg.param_channels(), 1, outcomes})};
  ImageBatch t(Shape{1, cfg.channels, 1, outcomes}, cfg.num_bits);
  for (int o = 0; o < outcomes; ++o) {
    for (int ch = 0; ch < cfg.param_channels(); ++ch) p.raw.at(0, ch, 0, o) = pixel_params[ch];
    int rest = o;
    for (int c = 0; c < cfg.channels; ++c) {
      t.at(0, c, 0, o) = static_cast<std::uint8_t>(rest % levels);
      rest /= levels;
    }
  }
  const Tensor lp = mol_log_prob(p, t);
  double mass = 0.0;
  for (double v : lp.values()) mass += std::exp(v);
  return mass;
}

std::vector<double> random_pixel(const MoLConfig& cfg, Rng& rng) {
  std::vector<double> v(cfg.param_channels());
  for (auto& x : v) x = rng.normal();
  const MoLParams layout{cfg, Tensor()};
  for (int k = 0; k < cfg.mixtures; ++k)
    for (int c = 0; c < cfg.channels; ++c) {
      v[layout.mean_channel(k, c)] = 0.8 * rng.normal();
      v[layout.scale_channel(k, c)] = -1.0 - 2.0 * rng.uniform();
    }
  return v;
}

TEST(MixtureOfLogistics, SingleComponentNormalizesOver256Levels) {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(total_mass(mol_config(1, 1, 8), random_pixel(mol_config(1, 1, 8), rng)), 1.0, 1e-6);
}

TEST(MixtureOfLogistics, FiveBitGridNormalizes) {
  Rng rng(8);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(total_mass(mol_config(10, 1, 5), random_pixel(mol_config(10, 1, 5), rng)), 1.0, 1e-6);
}

TEST(MixtureOfLogistics, JointRgbNormalizesAtFiveBits) {
  Rng rng(9);
  const auto cfg = mol_config(3, 3, 5);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(total_mass(cfg, random_pixel(cfg, rng)), 1.0, 1e-6);
}

TEST(MixtureOfLogistics, CoupledChannelsNormalizeAtEightBits) {
  Rng rng(10);
  const auto cfg = mol_config(4, 2, 8);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(total_mass(cfg, random_pixel(cfg, rng)), 1.0, 1e-6);
}

TEST(MixtureOfLogistics, UnsmoothedAndUnboundedModesNormalize) {
  Rng rng(12);
  for (bool smoothed : {false, true})
    for (bool bounded : {false, true}) {
      const auto cfg = mol_config(5, 1, 8, smoothed, bounded);
      EXPECT_NEAR(total_mass(cfg, random_pixel(cfg, rng)), 1.0, 1e-6);
    }
}

TEST(MixtureOfLogistics, IdenticalComponentsMatchSingleComponent) {
  Rng rng(13);
  const auto one = mol_config(1, 3, 8), two = mol_config(2, 3, 8);
  MoLParams p1{one, Tensor(Shape{2, one.param_channels(), 3, 3})};
  MoLParams p2{two, Tensor(Shape{2, two.param_channels(), 3, 3})};
  for (auto& v : p1.raw.values()) v = 0.5 * rng.normal();
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x)
        for (int k = 0; k < 2; ++k) {
          p2.raw.at(n, p2.logit_channel(k), y, x) = 0.0;
          for (int c = 0; c < 3; ++c) {
            p2.raw.at(n, p2.mean_channel(k, c), y, x) = p1.raw.at(n, p1.mean_channel(0, c), y, x);
            p2.raw.at(n, p2.scale_channel(k, c), y, x) = p1.raw.at(n, p1.scale_channel(0, c), y, x);
            for (int j = 0; j < c; ++j)
              p2.raw.at(n, p2.coeff_channel(k, c, j), y, x) = p1.raw.at(n, p1.coeff_channel(0, c, j), y, x);
          }
        }
  const ImageBatch t = testing::random_levels(Shape{2, 3, 3, 3}, 8, rng);
  const Tensor a = mol_log_prob(p1, t), b = mol_log_prob(p2, t);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(MixtureOfLogistics, MixtureWeightsSumToOne) {
  Rng rng(14);
  const auto cfg = mol_config(10, 3, 8);
  MoLParams p{cfg, random_tensor(Shape{2, cfg.param_channels(), 4, 4}, rng, 3.0)};
  const Tensor w = mol_mixture_weights(p);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double s = 0.0;
        for (int k = 0; k < 10; ++k) s += w.at(n, k, y, x);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
}

TEST(MixtureOfLogistics, BoundedModeRespectsFloor) {
  auto cfg = mol_config(1, 1, 8, true, true);
  for (double raw : {-50.0, -10.0, 0.0, 10.0, 50.0}) EXPECT_GE(mol_log_scale(cfg, raw).value, cfg.log_scale_floor);
  cfg.smoothed = false;
  EXPECT_EQ(mol_log_scale(cfg, -30.0).value, cfg.log_scale_floor);
  cfg.bounded = false;
  EXPECT_EQ(mol_log_scale(cfg, -30.0).value, -30.0);
}

TEST(MixtureOfLogistics, RejectsOutOfRangeTargets) {
  const auto cfg = mol_config(2, 1, 5);
  MoLParams p{cfg, Tensor(Shape{1, cfg.param_channels(), 1, 1})};
  ImageBatch t(Shape{1, 1, 1, 1}, 5);
  t.pixels[0] = 32;
  EXPECT_THROW(mol_log_prob(p, t), DataError);
  ImageBatch wrong_bits(Shape{1, 1, 1, 1}, 8);
  EXPECT_THROW(mol_log_prob(p, wrong_bits), ConfigError);
}

TEST(MixtureOfLogistics, LogProbNeverPositive) {
  Rng rng(15);
  const auto cfg = mol_config(3, 3, 8);
  MoLParams p{cfg, random_tensor(Shape{2, cfg.param_channels(), 4, 4}, rng, 4.0)};
  const Tensor lp = mol_log_prob(p, testing::random_levels(Shape{2, 3, 4, 4}, 8, rng));
  for (double v : lp.values()) {
    EXPECT_LE(v, 0.0);
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(MixtureOfLogistics, GradientsMatchFiniteDifferences) {
  Rng rng(16);
  for (bool smoothed : {true, false}) {
    const auto cfg = mol_config(3, 3, 8, smoothed, true);
    MoLParams p{cfg, random_tensor(Shape{1, cfg.param_channels(), 2, 2}, rng, 0.5)};
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i) p.raw[p.raw.index(0, p.scale_channel(k, c), i / 2, i % 2)] -= 2.0;
    const ImageBatch t = testing::random_levels(Shape{1, 3, 2, 2}, 8, rng);
    const Tensor upstream = random_tensor(Shape{1, 1, 2, 2}, rng);
    const Tensor g = mol_log_prob_backward(p, t, upstream);
    auto f = [&] {
      const Tensor lp = mol_log_prob(p, t);
      double s = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) s += upstream[i] * lp[i];
      return s;
    };
    EXPECT_LT(max_fd_error(p.raw, f, g), 1e-4) << "smoothed=" << smoothed;
  }
}

TEST(MixtureOfLogistics, DegenerateScaleSamplesDiscretizedMean) {
  // Unsmoothed, unbounded: the raw activation is the log-scale itself.
  const auto cfg = mol_config(1, 1, 8, false, false);
  MoLParams p{cfg, Tensor(Shape{1, cfg.param_channels(), 1, 64})};
  for (int x = 0; x < 64; ++x) {
    p.raw.at(0, p.mean_channel(0, 0), 0, x) = -1.0 + 2.0 * x / 63.0 + 0.001;
    p.raw.at(0, p.scale_channel(0, 0), 0, x) = -30.0;
  }
  Rng rng(17);
  const ImageBatch s = mol_sample(p, rng);
  const ImageBatch mode = mol_mode(p);
  EXPECT_EQ(s, mode);
  for (int x = 0; x < 64; ++x)
    EXPECT_EQ(s.at(0, 0, 0, x), static_cast<int>(std::lround((p.raw.at(0, 1, 0, x) + 1.0) * 127.5)));
}

TEST(MixtureOfLogistics, SamplesMatchLogisticCdf) {
  for (bool smoothed : {false, true}) {
    const auto cfg = mol_config(1, 1, 8, smoothed, true);
    const int n = 100'000;
    MoLParams p{cfg, Tensor(Shape{1, cfg.param_channels(), 100, 1000})};
    const double mean = 0.1, raw_scale = -1.0;
    for (int i = 0; i < n; ++i) {
      p.raw[p.raw.index(0, p.mean_channel(0, 0), i / 1000, i % 1000)] = mean;
      p.raw[p.raw.index(0, p.scale_channel(0, 0), i / 1000, i % 1000)] = raw_scale;
    }
    const double s = std::exp(mol_log_scale(cfg, raw_scale).value);
    Rng rng(18);
    const ImageBatch draws = mol_sample(p, rng);
    std::vector<int> counts(256, 0);
    for (auto v : draws.pixels) ++counts[v];
    double cdf = 0.0, ks = 0.0;
    for (int l = 0; l < 255; ++l) {
      cdf += counts[l] / static_cast<double>(n);
      const double edge = 2.0 * l / 255.0 - 1.0 + 1.0 / 255.0;
      ks = std::max(ks, std::abs(cdf - 1.0 / (1.0 + std::exp(-(edge - mean) / s))));
    }
    EXPECT_LT(ks, 0.01) << "smoothed=" << smoothed;
  }
}

TEST(MixtureOfLogistics, ZeroCoefficientsGiveIndependentChannels) {
  const auto cfg = mol_config(1, 3, 8);
  const int n = 100'000;
  MoLParams p{cfg, Tensor(Shape{1, cfg.param_channels(), 100, 1000})};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p.raw[p.raw.index(0, p.scale_channel(0, c), i / 1000, i % 1000)] = 1.0;
  Rng rng(19);
  const ImageBatch d = mol_sample(p, rng);
  auto corr = [&](int a, int b) {
    double ma = 0, mb = 0, sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < n; ++i) {
      ma += d.pixels[a * n + i];
      mb += d.pixels[b * n + i];
    }
    ma /= n;
    mb /= n;
    for (int i = 0; i < n; ++i) {
      const double x = d.pixels[a * n + i] - ma, y = d.pixels[b * n + i] - mb;
      sab += x * y;
      saa += x * x;
      sbb += y * y;
    }
    return sab / std::sqrt(saa * sbb);
  };
  EXPECT_LT(std::abs(corr(0, 1)), 0.01);
  EXPECT_LT(std::abs(corr(0, 2)), 0.01);
  EXPECT_LT(std::abs(corr(1, 2)), 0.01);
}

TEST(MixtureOfLogistics, SamplesStayOnGrid) {
  Rng rng(20);
  for (int bits : {5, 8}) {
    const auto cfg = mol_config(4, 3, bits);
    MoLParams p{cfg, random_tensor(Shape{2, cfg.param_channels(), 4, 4}, rng, 5.0)};
    for (auto v : mol_sample(p, rng).pixels) EXPECT_LE(v, (1 << bits) - 1);
  }
}

// ---------------------------------------------------------------------------
// Bernoulli.

TEST(Bernoulli, ZeroLogitIsLogHalf) {
  ImageBatch t(Shape{1, 1, 1, 1}, 1);
  t.pixels[0] = 1;
  EXPECT_NEAR(bernoulli_log_prob(BernoulliParams{Tensor(Shape{1, 1, 1, 1})}, t)[0], std::log(0.5), 1e-15);
}

TEST(Bernoulli, SaturatedLogit) {
  ImageBatch t(Shape{1, 1, 1, 1}, 1);
  t.pixels[0] = 1;
  EXPECT_NEAR(bernoulli_log_prob(BernoulliParams{Tensor(Shape{1, 1, 1, 1}, 40.0)}, t)[0], 0.0, 1e-9);
}

TEST(Bernoulli, MatchesHighPrecisionFormula) {
  Rng rng(21);
  BernoulliParams p{random_tensor(Shape{4, 1, 5, 5}, rng, 4.0)};
  ImageBatch t(Shape{4, 1, 5, 5}, 1);
  for (auto& v : t.pixels) v = rng.next() & 1;
  const Tensor lp = bernoulli_log_prob(p, t);
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const long double l = p.logits[i];
    const long double prob = 1.0L / (1.0L + std::exp(-l));
    const long double oracle = t.pixels[i] ? std::log(prob) : std::log1p(-prob);
    EXPECT_NEAR(lp[i], static_cast<double>(oracle), 1e-10);
  }
}

TEST(Bernoulli, ProbabilitiesSumToOne) {
  Rng rng(22);
  BernoulliParams p{random_tensor(Shape{1, 1, 1, 50}, rng, 5.0)};
  ImageBatch zeros(Shape{1, 1, 1, 50}, 1), ones(Shape{1, 1, 1, 50}, 1);
  std::fill(ones.pixels.begin(), ones.pixels.end(), 1);
  const Tensor a = bernoulli_log_prob(p, zeros), b = bernoulli_log_prob(p, ones);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(std::exp(a[i]) + std::exp(b[i]), 1.0, 1e-12);
}

TEST(Bernoulli, RejectsNonBinaryTargets) {
  ImageBatch t(Shape{1, 1, 1, 1}, 1);
  t.pixels[0] = 2;
  EXPECT_THROW(bernoulli_log_prob(BernoulliParams{Tensor(Shape{1, 1, 1, 1})}, t), DataError);
  EXPECT_THROW(bernoulli_log_prob(BernoulliParams{Tensor(Shape{1, 1, 1, 1})}, ImageBatch(Shape{1, 1, 1, 1}, 8)),
               ConfigError);
}

TEST(Bernoulli, GradientsMatchFiniteDifferences) {
  Rng rng(23);
  BernoulliParams p{random_tensor(Shape{2, 1, 3, 3}, rng, 2.0)};
  ImageBatch t(Shape{2, 1, 3, 3}, 1);
  for (auto& v : t.pixels) v = rng.next() & 1;
  const Tensor up = random_tensor(Shape{2, 1, 3, 3}, rng);
  const Tensor g = bernoulli_log_prob_backward(p, t, up);
  auto f = [&] {
    const Tensor lp = bernoulli_log_prob(p, t);
    double s = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) s += up[i] * lp[i];
    return s;
  };
  EXPECT_LT(max_fd_error(p.logits, f, g), 1e-4);
}

}  // namespace
}  // namespace deskvae
