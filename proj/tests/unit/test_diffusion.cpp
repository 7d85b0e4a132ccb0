#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "segdiff/diffusion.hpp"
#include "segdiff/error.hpp"
#include "segdiff/image_codec.hpp"
#include "segdiff/rng.hpp"
#include "segdiff/schedule.hpp"
#include "support.hpp"

namespace segdiff {
namespace {

using testing::max_abs_diff;

TEST(Schedule, EndpointsAndFirstCumulativeAlpha) {
  const auto s = make_schedule();
  ASSERT_EQ(s.betas.size(), 1000u);
  EXPECT_EQ(s.betas.front(), 8.5e-4);
  EXPECT_EQ(s.betas.back(), 1.2e-2);
  EXPECT_NEAR(s.alpha_bars[0], 0.99915, 1e-8);
}

TEST(Schedule, CumulativeProductMatchesLongDoubleOracle) {
  const auto s = make_schedule();
  long double prod = 1.0L;
  for (int t = 0; t < 1000; ++t) {
    const long double beta = 8.5e-4L + (1.2e-2L - 8.5e-4L) * t / 999.0L;
    prod *= 1.0L - beta;
    ASSERT_NEAR(s.alpha_bars[t], static_cast<double>(prod), 1e-12) << "t=" << t;
  }
}

TEST(Schedule, CumulativeAlphaStrictlyDecreasingInsideUnitInterval) {
  const auto s = make_schedule();
  for (int t = 0; t < 1000; ++t) {
    EXPECT_GT(s.alpha_bars[t], 0.0);
    EXPECT_LT(s.alpha_bars[t], 1.0);
    if (t > 0) EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
  }
  EXPECT_EQ(s.alpha_bar(kCleanTimestep), 1.0);
  EXPECT_THROW(s.alpha_bar(1000), ValidationError);
}

TEST(Schedule, InferenceTimestepsSpanTheChain) {
  const auto s = make_schedule();
  ASSERT_EQ(s.inference_timesteps.size(), 25u);
  EXPECT_EQ(s.inference_timesteps.front(), 999);
  EXPECT_EQ(s.inference_timesteps.back(), 0);
  for (std::size_t i = 1; i < 25; ++i) EXPECT_LT(s.inference_timesteps[i], s.inference_timesteps[i - 1]);
}

TEST(Schedule, InvalidParametersRejected) {
  EXPECT_THROW(make_schedule({1000, 0.02, 0.01, 25}), ConfigError);
  EXPECT_THROW(make_schedule({1000, 1e-4, 1.0, 25}), ConfigError);
  EXPECT_THROW(make_schedule({1000, 0.0, 0.01, 25}), ConfigError);
  EXPECT_THROW(make_schedule({1000, 1e-4, 0.02, 0}), ConfigError);
  EXPECT_THROW(make_schedule({1000, 1e-4, 0.02, 1001}), ConfigError);
  EXPECT_THROW(make_schedule({0, 1e-4, 0.02, 1}), ConfigError);
}

TEST(AddNoise, Endpoints) {
  const auto z0 = torch::randn({2, 3, 8, 8});
  const auto eps = torch::randn({2, 3, 8, 8});
  EXPECT_TRUE(torch::equal(add_noise(z0, eps, 1.0), z0));
  EXPECT_TRUE(torch::equal(add_noise(z0, eps, 0.0), eps));
  EXPECT_THROW(add_noise(z0, torch::randn({2, 3, 8, 7}), 0.5), ValidationError);
}

TEST(AddNoise, PerSampleTimestepsMatchScalarForm) {
  const auto s = make_schedule();
  const auto z0 = torch::randn({3, 2, 4, 4});
  const auto eps = torch::randn({3, 2, 4, 4});
  const auto t = torch::tensor({0, 400, 999}, torch::kInt64);
  const auto batched = add_noise(z0, eps, t, s);
  for (int i = 0; i < 3; ++i) {
    const int ti = t[i].item<int>();
    EXPECT_LT(max_abs_diff(batched[i], add_noise(z0[i], eps[i], ti, s)), 1e-6);
  }
  EXPECT_THROW(add_noise(z0, eps, torch::tensor({1, 2}, torch::kInt64), s), ValidationError);
}

TEST(AddNoise, MonteCarloVarianceMatchesSchedule) {
  torch::manual_seed(0);
  const auto s = make_schedule();
  const double z = 0.7;
  const auto z0 = torch::full({200000}, z, torch::kFloat64);
  for (double ab : {0.4, s.alpha_bars[100], s.alpha_bars[500], s.alpha_bars[900]}) {
    const auto eps = torch::randn({200000}, torch::kFloat64);
    const auto zt = add_noise(z0, eps, ab);
    EXPECT_NEAR(zt.var().item<double>() / (1.0 - ab), 1.0, 0.02) << "alpha_bar " << ab;
    EXPECT_NEAR(zt.mean().item<double>(), std::sqrt(ab) * z, 0.01);
  }
}

TEST(CubicTimestep, Examples) {
  EXPECT_EQ(cubic_timestep(1000.0, 1000), 0);
  EXPECT_EQ(cubic_timestep(500.0, 1000), 875);
  EXPECT_EQ(cubic_timestep(0.0, 1000), 999);
}

TEST(CubicTimestep, EmpiricalTailMatchesClosedForm) {
  std::mt19937_64 rng(42);
  const auto t = sample_timesteps(100000, 1000, true, rng);
  const auto acc = t.accessor<std::int64_t, 1>();
  for (int k : {250, 500, 750}) {
    std::int64_t above = 0;
    for (int i = 0; i < 100000; ++i) above += acc[i] >= k;
    // P(t >= k) = (1 - k/T)^(1/3)
    EXPECT_NEAR(above / 1e5, std::cbrt(1.0 - k / 1000.0), 0.01) << "k=" << k;
  }
  EXPECT_NEAR(std::cbrt(0.5), 0.7937, 1e-4);
}

TEST(CubicTimestep, UniformToggleIsUniform) {
  std::mt19937_64 rng(1);
  const auto t = sample_timesteps(100000, 1000, false, rng).to(torch::kFloat64);
  EXPECT_NEAR(t.mean().item<double>(), 499.5, 3.0);
  EXPECT_GE(t.min().item<double>(), 0.0);
  EXPECT_LE(t.max().item<double>(), 999.0);
}

TEST(NoiseMse, ExamplesAndLoopOracle) {
  const auto a = torch::randn({2, 3, 5, 5});
  EXPECT_EQ(noise_mse(a, a).item<float>(), 0.0f);
  EXPECT_NEAR(noise_mse(a + 1.0, a).item<float>(), 1.0f, 1e-6);
  const auto b = torch::randn({2, 3, 5, 5});
  const auto pa = a.contiguous(), pb = b.contiguous();
  double sum = 0;
  for (std::int64_t i = 0; i < pa.numel(); ++i) {
    const double d = pa.data_ptr<float>()[i] - pb.data_ptr<float>()[i];
    sum += d * d;
  }
  EXPECT_NEAR(noise_mse(a, b).item<float>(), sum / pa.numel(), 1e-5);
  EXPECT_THROW(noise_mse(a, torch::randn({2, 3, 5})), ValidationError);
}

// Independent double-precision DDIM oracle.
double oracle_step(double z, double eps, double ab, double ab_next) {
  const double x0 = (z - std::sqrt(1 - ab) * eps) / std::sqrt(ab);
  return std::sqrt(ab_next) * x0 + std::sqrt(1 - ab_next) * eps;
}

TEST(DdimStep, SingleStepToCleanMatchesOracle) {
  const auto s = make_schedule();
  const auto z = torch::randn({1, 3, 4, 4}, torch::kFloat64);
  const auto eps = torch::randn({1, 3, 4, 4}, torch::kFloat64);
  for (int t : {999, 500, 40, 0}) {
    const auto out = ddim_step(z, eps, t, kCleanTimestep, s);
    const double ab = s.alpha_bars[t];
    for (int i = 0; i < 48; ++i) {
      const double zi = z.view(-1)[i].item<double>(), ei = eps.view(-1)[i].item<double>();
      ASSERT_NEAR(out.view(-1)[i].item<double>(), oracle_step(zi, ei, ab, 1.0), 1e-5);
    }
    // Stepping to the clean sample is the clean estimate itself.
    EXPECT_LT(max_abs_diff(out, predict_clean(z, eps, ab)), 1e-9);
  }
}

TEST(DdimStep, SameAlphaIsAFixedPoint) {
  const auto z = torch::randn({2, 3, 6, 6});
  const auto eps = torch::randn({2, 3, 6, 6});
  EXPECT_LT(max_abs_diff(ddim_step(z, eps, 0.37, 0.37), z), 1e-6);
}

TEST(DdimStep, FullLoopMatchesOracle) {
  const auto s = make_schedule();
  auto model = [](const torch::Tensor& z) { return 0.5 * torch::tanh(z); };
  torch::manual_seed(3);
  auto z = torch::randn({1, 3, 8, 8});
  std::vector<double> ref(z.numel());
  for (std::int64_t i = 0; i < z.numel(); ++i) ref[i] = z.view(-1)[i].item<float>();
  auto steps = s.inference_timesteps;
  steps.push_back(kCleanTimestep);
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    z = ddim_step(z, model(z), steps[k], steps[k + 1], s);
    for (auto& v : ref) v = oracle_step(v, 0.5 * std::tanh(v), s.alpha_bar(steps[k]), s.alpha_bar(steps[k + 1]));
  }
  for (std::int64_t i = 0; i < z.numel(); ++i) ASSERT_NEAR(z.view(-1)[i].item<float>(), ref[i], 1e-4);
}

TEST(DdimStep, RejectsNonDecreasingOrderAndIsDeterministic) {
  const auto s = make_schedule();
  const auto z = torch::randn({1, 3, 4, 4});
  const auto eps = torch::randn({1, 3, 4, 4});
  EXPECT_THROW(ddim_step(z, eps, 100, 100, s), OrderingError);
  EXPECT_THROW(ddim_step(z, eps, 100, 200, s), OrderingError);
  EXPECT_TRUE(torch::equal(ddim_step(z, eps, 500, 460, s), ddim_step(z, eps, 500, 460, s)));
  EXPECT_THROW(predict_clean(z, eps, 0.0), DomainError);
}

TEST(CfgCombine, Examples) {
  const auto u = torch::randn({2, 3, 4, 4});
  const auto c = torch::randn({2, 3, 4, 4});
  EXPECT_TRUE(torch::equal(cfg_combine(u, c, 0.0), u));
  EXPECT_LT(max_abs_diff(cfg_combine(u, c, 1.0), c), 1e-6);
  EXPECT_LT(max_abs_diff(cfg_combine(c, c, 3.0), c), 1e-6);
  EXPECT_LT(max_abs_diff(cfg_combine(u, c), u + 3.0 * (c - u)), 1e-6);
}

TEST(ImageCodec, IdentityIsExact) {
  IdentityCodec codec(3);
  const auto x = torch::randn({2, 3, 8, 8});
  EXPECT_TRUE(torch::equal(codec.decode(codec.encode(x)), x));
  EXPECT_EQ(codec.reconstruction_tolerance(), 0.0);
}

TEST(ImageCodec, TinyAutoencoderShapesAndTolerance) {
  torch::manual_seed(0);
  const auto data = torch::rand({8, 3, 16, 16}) * 2 - 1;
  AutoencoderTrainOptions opt;
  opt.steps = 200;
  auto codec = train_tiny_autoencoder(data, opt, 4);
  const auto z = codec->encode(data);
  EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{8, 4, 4, 4}));
  const double err = max_abs_diff(codec->decode(z), data);
  EXPECT_LE(err, codec->reconstruction_tolerance() + 1e-6);
  EXPECT_THROW(codec->encode(torch::zeros({1, 3, 10, 16})), ValidationError);
}

TEST(Rng, SerializedStateReplaysDraws) {
  Rng a(123);
  a.uniform(0, 1);
  torch::randn({5}, a.generator());
  const auto state = a.serialize();
  const double u = a.uniform(0, 1);
  const auto n = torch::randn({7}, a.generator());
  Rng b(999);
  b.restore(state);
  EXPECT_EQ(b.uniform(0, 1), u);
  EXPECT_TRUE(torch::equal(torch::randn({7}, b.generator()), n));
  EXPECT_THROW(b.restore("garbage"), ValidationError);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(5, 1), derive_seed(5, 1));
  EXPECT_NE(derive_seed(5, 1), derive_seed(5, 2));
  EXPECT_NE(derive_seed(5, 1), derive_seed(6, 1));
}

}  // namespace
}  // namespace segdiff
