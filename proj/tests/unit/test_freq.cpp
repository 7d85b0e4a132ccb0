#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "segdiff/freq.hpp"
#include "support.hpp"

namespace segdiff {
namespace {

using testing::Gen;

double energy(const FloatMap& m) {
  double e = 0;
  for (double v : m.data) e += v * v;
  return e;
}

FloatMap cosine_map(int h, int w, int cycles) {
  FloatMap m(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = std::cos(2 * std::numbers::pi * cycles * x / w);
  return m;
}

TEST(RadialSpectrum, ConstantMapIsAllDc) {
  FloatMap m(1, 16, 16, 2.5);
  const auto s = radial_spectrum(m);
  ASSERT_FALSE(s.power.empty());
  EXPECT_NEAR(s.power[0] * s.counts[0], energy(m), 1e-9);
  for (std::size_t b = 1; b < s.power.size(); ++b) EXPECT_NEAR(s.power[b], 0.0, 1e-18);
}

TEST(RadialSpectrum, CosinePeaksAtItsFrequency) {
  const auto s = radial_spectrum(cosine_map(32, 32, 4));
  std::size_t peak = 0;
  for (std::size_t b = 0; b < s.power.size(); ++b)
    if (s.power[b] * s.counts[b] > s.power[peak] * s.counts[peak]) peak = b;
  EXPECT_NEAR(s.frequency[peak], 4.0 / 32, 1e-12);
  EXPECT_NEAR(s.band_energy(0.1, 0.15), energy(cosine_map(32, 32, 4)), 1e-8);
}

TEST(RadialSpectrum, ParsevalHoldsForAnyShape) {
  Gen gen(1);
  for (int trial = 0; trial < 25; ++trial) {
    const auto m = gen.floats(gen.integer(1, 40), gen.integer(1, 40));
    const auto s = radial_spectrum(m);
    EXPECT_NEAR(s.total_energy(), energy(m), 1e-6 * energy(m)) << m.height << "x" << m.width;
    std::int64_t coeffs = 0;
    for (auto c : s.counts) coeffs += c;
    EXPECT_EQ(coeffs, static_cast<std::int64_t>(m.height) * m.width);
    for (std::size_t b = 0; b < s.power.size(); ++b) {
      EXPECT_GE(s.power[b], 0.0);
      if (b > 0) EXPECT_GT(s.frequency[b], s.frequency[b - 1]);
    }
  }
}

TEST(RadialSpectrum, TensorAndRasterFormsAgree) {
  Gen gen(2);
  const auto m = gen.floats(12, 20);
  const auto t = torch::from_blob(const_cast<double*>(m.data.data()), {12, 20}, torch::kFloat64).clone();
  const auto a = radial_spectrum(m), b = radial_spectrum(t);
  ASSERT_EQ(a.power.size(), b.power.size());
  for (std::size_t i = 0; i < a.power.size(); ++i) EXPECT_NEAR(a.power[i], b.power[i], 1e-12);
  EXPECT_THROW(radial_spectrum(torch::zeros({2, 3, 4})), ValidationError);
}

Trajectory ramp_trajectory(const std::vector<int>& steps, const std::vector<torch::Tensor>& latents) {
  Trajectory t;
  t.id = "ramp";
  for (std::size_t i = 0; i < steps.size(); ++i) t.snapshots.push_back({steps[i], latents[i], latents[i] * 0.5});
  return t;
}

SnapshotDecoder identity_decoder() {
  return [](const torch::Tensor& x) { return x; };
}

TEST(StageDecompose, IdenticalSnapshotsHaveNoChange) {
  const auto x = torch::randn({2, 8, 8});
  const auto traj = ramp_trajectory({900, 600, 300, 0}, {x, x, x, x});
  const auto d = stage_decompose(traj, identity_decoder());
  EXPECT_EQ(d.initial.snapshots, 2);
  EXPECT_EQ(d.final.snapshots, 2);
  for (const auto* st : {&d.initial, &d.final})
    for (const auto& [band, v] : st->mean_change) EXPECT_NEAR(v, 0.0, 1e-18) << band;
  EXPECT_TRUE(d.notes.empty());
}

TEST(StageDecompose, SeparatesCoarseAndFineChanges) {
  // Early steps move a low-frequency pattern, late steps a high-frequency one.
  auto lo = torch::zeros({1, 32, 32}, torch::kFloat64), hi = torch::zeros({1, 32, 32}, torch::kFloat64);
  const auto c1 = cosine_map(32, 32, 1), c12 = cosine_map(32, 32, 12);
  for (int i = 0; i < 32 * 32; ++i) {
    lo.view(-1)[i] = c1.data[i];
    hi.view(-1)[i] = c12.data[i];
  }
  std::vector<torch::Tensor> latents;
  auto x = torch::zeros({1, 32, 32}, torch::kFloat64);
  for (int k = 0; k < 3; ++k) latents.push_back(x = x + lo);
  for (int k = 0; k < 3; ++k) latents.push_back(x = x + hi);
  const auto d = stage_decompose(ramp_trajectory({999, 800, 600, 400, 200, 0}, latents), identity_decoder());
  EXPECT_GT(d.initial.mean_change.at("low"), d.final.mean_change.at("low"));
  EXPECT_GT(d.final.mean_change.at("high"), d.initial.mean_change.at("high"));
  EXPECT_EQ(d.initial.transitions + d.final.transitions, 5);
}

TEST(StageDecompose, CutAtTopLeavesInitialEmpty) {
  const auto traj = ramp_trajectory({999, 500, 0}, {torch::randn({1, 4, 4}), torch::randn({1, 4, 4}),
                                                    torch::randn({1, 4, 4})});
  const auto d = stage_decompose(traj, identity_decoder(), 1000);
  EXPECT_TRUE(d.initial.empty());
  EXPECT_EQ(d.final.snapshots, 3);
  ASSERT_EQ(d.notes.size(), 1u);
}

TEST(StageDecompose, OrderingAndDecoderShapeChecked) {
  const auto x = torch::randn({1, 4, 4});
  EXPECT_THROW(stage_decompose(ramp_trajectory({100, 100}, {x, x}), identity_decoder()), OrderingError);
  EXPECT_THROW(stage_decompose(ramp_trajectory({100, 200}, {x, x}), identity_decoder()), OrderingError);
  const SnapshotDecoder flat = [](const torch::Tensor& t) { return t.flatten(); };
  EXPECT_THROW(stage_decompose(ramp_trajectory({200, 100}, {x, x}), flat), ValidationError);
  EXPECT_NO_THROW(stage_decompose(ramp_trajectory({200, 100}, {x, x}), identity_decoder(), 500, default_bands(), true));
}

TEST(Trajectory, SaveLoadRoundTrip) {
  const auto dir = testing::scratch_dir("trajectory");
  const auto traj = ramp_trajectory({999, 40, -1}, {torch::randn({3, 4, 5}), torch::randn({3, 4, 5}),
                                                    torch::randn({3, 4, 5})});
  save_trajectory(traj, dir);
  const auto back = load_trajectory(dir);
  EXPECT_EQ(back.id, "ramp");
  ASSERT_EQ(back.snapshots.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.snapshots[i].timestep, traj.snapshots[i].timestep);
    EXPECT_TRUE(torch::equal(back.snapshots[i].latent, traj.snapshots[i].latent));
    EXPECT_TRUE(torch::equal(back.snapshots[i].clean_estimate, traj.snapshots[i].clean_estimate));
  }
  EXPECT_THROW(load_trajectory(testing::scratch_dir("trajectory_missing")), IoError);
}

TEST(Wiener, Examples) {
  EXPECT_DOUBLE_EQ(wiener_response(0.3, {0.0}).response[0], 1.0);
  EXPECT_DOUBLE_EQ(wiener_response(1.0, {0.4}).response[0], 1.0);
  EXPECT_DOUBLE_EQ(wiener_response(0.5, {1.0}).response[0], 0.5);
  EXPECT_THROW(wiener_response(0.0, {0.1}), DomainError);
  EXPECT_THROW(wiener_response(1.5, {0.1}), DomainError);
  EXPECT_THROW(wiener_response(0.5, {-0.1}), DomainError);
}

TEST(Wiener, MonotoneAndOrderedByNoiseLevel) {
  const auto f = frequency_grid(101);
  EXPECT_DOUBLE_EQ(f.front(), 0.0);
  EXPECT_DOUBLE_EQ(f.back(), 0.5);
  const auto clean = wiener_response(0.9, f), noisy = wiener_response(0.1, f);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_GE(clean.response[i], noisy.response[i]);
    EXPECT_GT(clean.response[i], 0.0);
    EXPECT_LE(clean.response[i], 1.0);
    if (i > 0) {
      EXPECT_LT(clean.response[i], clean.response[i - 1]);
      EXPECT_LT(noisy.response[i], noisy.response[i - 1]);
    }
  }
}

TEST(Wiener, ClosedFormMatchesExactFilterForInverseSquarePower) {
  std::vector<double> f, power;
  for (int i = 1; i <= 50; ++i) {
    f.push_back(i / 100.0);
    power.push_back(1.0 / (f.back() * f.back()));
  }
  for (double ab : {0.05, 0.5, 0.95}) {
    const auto closed = wiener_response(ab, f), exact = wiener_response_exact(ab, f, power, 1.0);
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(closed.response[i], exact.response[i], 1e-12);
  }
  const auto n = normalized(wiener_response_exact(0.5, f, power, 4.0));
  EXPECT_DOUBLE_EQ(*std::max_element(n.response.begin(), n.response.end()), 1.0);
  EXPECT_THROW(wiener_response_exact(0.5, f, {1.0}), ValidationError);
}

}  // namespace
}  // namespace segdiff
