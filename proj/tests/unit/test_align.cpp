#include <gtest/gtest.h>

#include "segdiff/align.hpp"
#include "support.hpp"

namespace segdiff {
namespace {

using testing::Gen;

TEST(RepaLoss, IdenticalAndOppositePatches) {
  torch::manual_seed(0);
  const auto x = torch::randn({2, 64, 32});
  EXPECT_NEAR(repa_loss(x, x).loss.item<float>(), -1.0f, 1e-6);
  EXPECT_NEAR(repa_loss(x, -x).loss.item<float>(), 1.0f, 1e-6);
  EXPECT_EQ(repa_loss(x, x).skipped, 0);
}

TEST(RepaLoss, IndependentPatchesAreNearZero) {
  for (int seed = 0; seed < 5; ++seed) {
    torch::manual_seed(seed);
    const auto loss = repa_loss(torch::randn({64, 256}), torch::randn({64, 256})).loss.item<float>();
    EXPECT_LT(std::abs(loss), 0.15f) << "seed " << seed;
  }
}

TEST(RepaLoss, BoundedAndScaleInvariant) {
  Gen gen(2);
  for (int trial = 0; trial < 30; ++trial) {
    torch::manual_seed(trial);
    const int n = gen.integer(1, 20), d = gen.integer(1, 40);
    const auto a = torch::randn({n, d}) * gen.real(1e-3, 1e3);
    const auto b = torch::randn({n, d}) * gen.real(1e-3, 1e3);
    const float loss = repa_loss(a, b).loss.item<float>();
    EXPECT_GE(loss, -1.0f);
    EXPECT_LE(loss, 1.0f);
    const auto scale = torch::rand({n, 1}) * 10 + 0.1;
    EXPECT_NEAR(repa_loss(a * scale, b).loss.item<float>(), loss, 1e-5);
  }
}

TEST(RepaLoss, ZeroNormPatchesAreSkippedAndCounted) {
  torch::manual_seed(3);
  auto a = torch::randn({8, 16});
  const auto b = a.clone();
  a[2].zero_();
  a[5].zero_();
  const auto r = repa_loss(a, b);
  EXPECT_EQ(r.skipped, 2);
  EXPECT_NEAR(r.loss.item<float>(), -1.0f, 1e-6);
  const auto all = repa_loss(torch::zeros({4, 3}), torch::zeros({4, 3}));
  EXPECT_EQ(all.skipped, 4);
  EXPECT_EQ(all.loss.item<float>(), 0.0f);
  EXPECT_TRUE(std::isfinite(all.loss.item<float>()));
}

TEST(RepaLoss, ShapeMismatchRejected) {
  EXPECT_THROW(repa_loss(torch::randn({4, 8}), torch::randn({4, 9})), ValidationError);
  EXPECT_THROW(repa_loss(torch::randn({8}), torch::randn({8})), ValidationError);
}

TEST(TotalLoss, ScheduleExamples) {
  const auto mse = torch::tensor(1.0);
  const auto repa = torch::tensor(-1.0);
  EXPECT_DOUBLE_EQ(total_loss(mse, repa, 0, 0.5, 200).item<double>(), 0.5);
  const auto after = total_loss(mse, repa, 200, 0.5, 200);
  EXPECT_TRUE(after.is_same(mse));
  EXPECT_TRUE(total_loss(mse, repa, 5000, 0.5, 200).is_same(mse));
  EXPECT_TRUE(total_loss(mse, torch::Tensor(), 3, 0.5, 200).is_same(mse));
  EXPECT_THROW(total_loss(mse, repa, -1, 0.5, 200), ValidationError);
}

TEST(TotalLoss, LambdaSweep) {
  Gen gen(4);
  for (double lambda : {0.0, 0.25, 0.5}) {
    for (int trial = 0; trial < 5; ++trial) {
      const double m = gen.real(0, 2), r = gen.real(-1, 1);
      const auto step = gen.integer(0, 199);
      EXPECT_NEAR(total_loss(torch::tensor(m, torch::kFloat64), torch::tensor(r, torch::kFloat64), step, lambda, 200)
                      .item<double>(),
                  m + lambda * r, 1e-12);
    }
  }
}

TEST(Projector, PoolsToGridAndProjects) {
  torch::manual_seed(5);
  Projector p(16, 24, 8, 32);
  EXPECT_EQ(p->forward(torch::randn({3, 16, 16, 16})).sizes(), (std::vector<std::int64_t>{3, 64, 24}));
  EXPECT_EQ(p->forward(torch::randn({1, 16, 5, 7})).sizes(), (std::vector<std::int64_t>{1, 64, 24}));
  EXPECT_THROW(p->forward(torch::randn({16, 8, 8})), ValidationError);
}

TEST(CoarseFeatureTargets, ShapeAndCache) {
  torch::manual_seed(6);
  CoarseConfig cfg;
  cfg.widths = {8, 16};
  cfg.groups = 4;
  CoarseFeatureTargets targets(CoarseNet(cfg), 4);
  EXPECT_EQ(targets.dim(), 8);
  const auto images = torch::rand({2, 3, 16, 16});
  const auto first = targets.targets({"a", "b"}, images);
  EXPECT_EQ(first.sizes(), (std::vector<std::int64_t>{2, 16, 8}));
  // Cached by id: a different image under a known id returns the cached row.
  const auto again = targets.targets({"b", "a"}, torch::rand({2, 3, 16, 16}));
  EXPECT_TRUE(torch::equal(again[0], first[1]));
  EXPECT_THROW(targets.targets({"a"}, images), ValidationError);
}

TEST(PrecomputedTargets, RoundTripAndMissingIds) {
  const auto dir = testing::scratch_dir("repa_targets");
  torch::manual_seed(7);
  std::map<std::string, torch::Tensor> feats = {{"x0", torch::randn({16, 5})}, {"x1", torch::randn({16, 5})}};
  write_precomputed_targets(dir, feats, 4);
  PrecomputedTargets targets(dir);
  EXPECT_EQ(targets.dim(), 5);
  EXPECT_EQ(targets.grid(), 4);
  const auto t = targets.targets({"x1", "x0"}, torch::zeros({2, 3, 8, 8}));
  EXPECT_TRUE(torch::equal(t[0], feats["x1"]));
  EXPECT_TRUE(torch::equal(t[1], feats["x0"]));
  EXPECT_THROW(targets.targets({"nope"}, torch::zeros({1, 3, 8, 8})), ValidationError);
  EXPECT_THROW(write_precomputed_targets(dir, {{"bad", torch::randn({15, 5})}}, 4), ValidationError);
  EXPECT_THROW(PrecomputedTargets(testing::scratch_dir("repa_empty")), IoError);
}

TEST(RawFloatFiles, SizeIsChecked) {
  const auto dir = testing::scratch_dir("f32");
  const auto x = torch::randn({3, 4});
  write_f32(dir / "x.f32", x);
  EXPECT_TRUE(torch::equal(read_f32(dir / "x.f32", {3, 4}), x));
  EXPECT_THROW(read_f32(dir / "x.f32", {3, 5}), ValidationError);
  EXPECT_THROW(read_f32(dir / "missing.f32", {1}), IoError);
}

}  // namespace
}  // namespace segdiff
