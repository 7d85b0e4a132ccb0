#include <gtest/gtest.h>

#include "segdiff/diffusion.hpp"
#include "segdiff/guidance.hpp"
#include "segdiff/refiner.hpp"
#include "support.hpp"

namespace segdiff {
namespace {

using testing::max_abs_diff;

DenoiserConfig small_denoiser() {
  DenoiserConfig c;
  c.base_width = 16;
  return c;
}

RefinerConfig small_refiner() {
  RefinerConfig r;
  r.denoiser = small_denoiser();
  r.guidance.max_tokens = 256;
  r.align.enabled = false;
  return r;
}

void randomise(GuidanceModule& m) {
  torch::NoGradGuard ng;
  for (auto& p : m->parameters()) p.normal_(0.0, 0.3);
}

TEST(GuidanceModule, FreshModuleEmitsZero) {
  torch::manual_seed(0);
  GuidanceModule m(16, 32, GuidanceConfig{});
  const auto out = m->forward(torch::randn({2, 16, 8, 8}), torch::randn({2, 32, 8, 8}));
  EXPECT_EQ(out.abs().max().item<float>(), 0.0f);
}

TEST(GuidanceModule, AttentionRowsSumToOne) {
  torch::manual_seed(1);
  GuidanceModule m(16, 32, GuidanceConfig{32, 4, 1024});
  randomise(m);
  const auto w = m->attention_weights(torch::randn({2, 16, 6, 5}), torch::randn({2, 32, 6, 5}));
  EXPECT_EQ(w.sizes(), (std::vector<std::int64_t>{2, 4, 30, 30}));
  EXPECT_LT(max_abs_diff(w.sum(-1), torch::ones({2, 4, 30})), 1e-6);
  EXPECT_GE(w.min().item<float>(), 0.0f);
}

TEST(GuidanceModule, SinglePixelMatchesClosedForm) {
  torch::manual_seed(2);
  GuidanceModule m(4, 6, GuidanceConfig{8, 1, 1024});
  randomise(m);
  const auto f = torch::randn({1, 4, 1, 1});
  const auto c = torch::randn({1, 6, 1, 1});
  const auto out = m->forward(f, c);
  // One key: softmax is 1, so the attention output is W_V f_c exactly.
  torch::NoGradGuard ng;
  const auto cat = torch::cat({f, c}, 1).view({10});
  const auto fused = torch::matmul(m->zero_conv->weight.view({4, 10}), cat) + m->zero_conv->bias;
  const auto v = torch::matmul(m->w_v->weight, c.view({6}));
  const auto expected = fused + torch::matmul(m->w_o->weight, v) + m->w_o->bias;
  EXPECT_LT(max_abs_diff(out.view({4}), expected), 1e-5);
}

TEST(GuidanceModule, AttentionMatchesManualSoftmax) {
  torch::manual_seed(3);
  GuidanceModule m(8, 8, GuidanceConfig{16, 2, 1024});
  randomise(m);
  const auto f = torch::randn({1, 8, 3, 3});
  const auto c = torch::randn({1, 8, 3, 3});
  const auto w = m->attention_weights(f, c);
  torch::NoGradGuard ng;
  const auto fused = m->zero_conv->forward(torch::cat({f, c}, 1)).flatten(2).transpose(1, 2)[0];  // [9,8]
  const auto q = m->w_q->forward(fused);
  const auto k = m->w_k->forward(c.flatten(2).transpose(1, 2)[0]);
  for (int h = 0; h < 2; ++h) {
    const auto qh = q.slice(1, h * 8, h * 8 + 8), kh = k.slice(1, h * 8, h * 8 + 8);
    const auto ref = torch::softmax(torch::matmul(qh, kh.t()) / std::sqrt(8.0), -1);
    EXPECT_LT(max_abs_diff(w[0][h], ref), 1e-5);
  }
}

TEST(GuidanceModule, LargeConditionGridsArePooled) {
  torch::manual_seed(4);
  GuidanceModule m(8, 16, GuidanceConfig{});
  const auto w = m->attention_weights(torch::randn({1, 8, 64, 64}), torch::randn({1, 16, 64, 64}));
  EXPECT_EQ(w.size(2), 4096);
  EXPECT_EQ(w.size(3), 1024);
  const auto small = m->attention_weights(torch::randn({1, 8, 32, 32}), torch::randn({1, 16, 32, 32}));
  EXPECT_EQ(small.size(3), 1024);
}

TEST(GuidanceModule, DimensionMismatchRejected) {
  GuidanceModule m(8, 16, GuidanceConfig{});
  EXPECT_THROW(m->forward(torch::randn({1, 8, 4, 4}), torch::randn({1, 12, 4, 4})), ValidationError);
  EXPECT_THROW(m->forward(torch::randn({1, 7, 4, 4}), torch::randn({1, 16, 4, 4})), ValidationError);
  EXPECT_THROW(m->forward(torch::randn({1, 8, 4, 4}), torch::randn({1, 16, 4, 5})), ValidationError);
}

TEST(EncodeConditions, IdenticalConditionsGiveIdenticalHalves) {
  torch::manual_seed(5);
  UNetEncoder enc(small_denoiser());
  const auto c = torch::randn({2, 3, 64, 64});
  const auto feats = encode_conditions(enc, c, c, timestep_batch(300, 2));
  const auto cfg = small_denoiser();
  ASSERT_EQ(static_cast<int>(feats.size()), cfg.tap_count());
  const std::vector<int> sizes = {64, 64, 32, 32, 16, 16, 16};
  const auto channels = cfg.tap_channels();
  for (std::size_t i = 0; i < feats.size(); ++i) {
    EXPECT_EQ(feats[i].size(1), 2 * channels[i]);
    EXPECT_EQ(feats[i].size(2), sizes[i]);
    const auto halves = feats[i].chunk(2, 1);
    EXPECT_TRUE(torch::equal(halves[0], halves[1]));
  }
  EXPECT_THROW(encode_conditions(enc, c, torch::randn({2, 3, 32, 32}), timestep_batch(300, 2)), ValidationError);
}

TEST(Guide, LevelCountsMustMatch) {
  torch::manual_seed(6);
  const auto cfg = small_denoiser();
  auto modules = make_guidance_modules(cfg, GuidanceConfig{});
  UNetEncoder enc(cfg);
  torch::NoGradGuard ng;
  const auto z = torch::randn({1, 3, 16, 16});
  const auto t = timestep_batch(1, 1);
  const auto taps = enc->forward(z, t).taps;
  const auto cond = encode_conditions(enc, z, z, t);
  const auto g = guide(modules, taps, cond);
  EXPECT_EQ(g.size(), taps.size());
  std::vector<torch::Tensor> fewer(cond.begin(), cond.end() - 1);
  EXPECT_THROW(guide(modules, taps, fewer), ValidationError);
}

TEST(Refiner, FreshGuidanceReproducesWarmDenoiser) {
  torch::manual_seed(7);
  DenoiserUNet warm(small_denoiser());
  Refiner refiner(small_refiner());
  refiner->init_from(warm);
  torch::NoGradGuard ng;
  const auto z = torch::randn({2, 3, 32, 32});
  const auto t = timestep_batch(torch::tensor({10, 800}), 2);
  const auto base = warm->forward(z, {}, t).eps;
  const auto out = refiner->forward(z, torch::randn_like(z), torch::randn_like(z), t);
  EXPECT_LT(max_abs_diff(out.eps, base), 1e-6);
}

TEST(Refiner, FrozenEncoderIsUntouchedByTraining) {
  torch::manual_seed(8);
  Refiner refiner(small_refiner());
  std::vector<torch::Tensor> before;
  for (const auto& p : refiner->frozen_encoder->parameters()) {
    EXPECT_FALSE(p.requires_grad());
    before.push_back(p.clone());
  }
  torch::optim::Adam opt(refiner->trainable_parameters(), torch::optim::AdamOptions(1e-2));
  const auto s = make_schedule();
  for (int step = 0; step < 3; ++step) {
    const auto z0 = torch::randn({2, 3, 16, 16});
    const auto eps = torch::randn_like(z0);
    const auto t = torch::tensor({100, 600}, torch::kInt64);
    const auto out = refiner->forward(add_noise(z0, eps, t, s), torch::randn_like(z0), torch::randn_like(z0), t);
    const auto loss = noise_mse(out.eps, eps);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  const auto after = refiner->frozen_encoder->parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(torch::equal(before[i], after[i]));
  // The trainable copy did move.
  bool moved = false;
  const auto frozen = refiner->frozen_encoder->parameters();
  const auto live = refiner->denoiser->encoder->parameters();
  for (std::size_t i = 0; i < live.size(); ++i) moved |= !torch::equal(live[i], frozen[i]);
  EXPECT_TRUE(moved);
}

TEST(Refiner, TrainedGuidanceRespondsToRoughCondition) {
  torch::manual_seed(9);
  Refiner refiner(small_refiner());
  torch::optim::Adam opt(refiner->trainable_parameters(), torch::optim::AdamOptions(1e-2));
  const auto s = make_schedule();
  const auto z0 = torch::randn({2, 3, 16, 16});
  const auto ci = torch::randn_like(z0), cr = z0.clone();
  const auto t = torch::tensor({100, 600}, torch::kInt64);
  for (int step = 0; step < 5; ++step) {
    const auto eps = torch::randn_like(z0);
    const auto loss = noise_mse(refiner->forward(add_noise(z0, eps, t, s), ci, cr, t).eps, eps);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  torch::NoGradGuard ng;
  const auto z = torch::randn_like(z0);
  const auto a = refiner->forward(z, ci, cr, t).guidance;
  const auto b = refiner->forward(z, ci, cr + 0.5 * torch::randn_like(cr), t).guidance;
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, max_abs_diff(a[i], b[i]));
  EXPECT_GT(diff, 0.0);
}

TEST(Refiner, DisabledRoughConditionIsIgnored) {
  auto cfg = small_refiner();
  cfg.conditions.rough = false;
  torch::manual_seed(10);
  Refiner refiner(cfg);
  {
    torch::NoGradGuard ng;
    for (auto& p : refiner->guidance_modules->parameters()) p.normal_(0.0, 0.2);
  }
  torch::NoGradGuard ng;
  const auto z = torch::randn({1, 3, 16, 16});
  const auto ci = torch::randn_like(z);
  const auto t = timestep_batch(300, 1);
  EXPECT_TRUE(torch::equal(refiner->forward(z, ci, torch::randn_like(z), t).eps,
                           refiner->forward(z, ci, torch::zeros_like(z), t).eps));
}

TEST(Refiner, GuidedEpsMatchesSeparatePasses) {
  torch::manual_seed(11);
  Refiner refiner(small_refiner());
  {
    torch::NoGradGuard ng;
    for (auto& p : refiner->guidance_modules->parameters()) p.normal_(0.0, 0.2);
  }
  torch::NoGradGuard ng;
  const auto z = torch::randn({2, 3, 16, 16});
  const auto ci = torch::randn_like(z), cr = torch::randn_like(z);
  const auto t = timestep_batch(400, 2);
  const auto cond = refiner->forward(z, ci, cr, t).eps;
  const auto uncond = refiner->forward(z, torch::zeros_like(ci), torch::zeros_like(cr), t).eps;
  EXPECT_LT(max_abs_diff(refiner->guided_eps(z, ci, cr, t, 3.0), cfg_combine(uncond, cond, 3.0)), 1e-4);
}

TEST(Refiner, PlainModeConcatenatesBothConditions) {
  auto cfg = small_refiner();
  cfg.use_guidance = false;
  Refiner refiner(cfg);
  EXPECT_EQ(refiner->config().denoiser.condition_channels, 6);
  EXPECT_FALSE(refiner->guidance_modules);
  torch::NoGradGuard ng;
  const auto z = torch::randn({1, 3, 16, 16});
  EXPECT_EQ(refiner->forward(z, z, z, timestep_batch(2, 1)).eps.sizes(), z.sizes());
  EXPECT_TRUE(refiner->forward(z, z, z, timestep_batch(2, 1)).guidance.empty());
}

TEST(WarmStart, WiderInputConvGetsZeroPaddedChannels) {
  torch::manual_seed(12);
  DenoiserUNet warm(small_denoiser());
  auto cfg = small_denoiser();
  cfg.condition_channels = 3;
  DenoiserUNet wide(cfg);
  warm_start(*warm, *wide);
  const auto params = wide->named_parameters();
  for (const auto& item : params) {
    if (item.key().find("input_conv.weight") == std::string::npos) continue;
    EXPECT_EQ(item.value().slice(1, 3, 6).abs().max().item<float>(), 0.0f);
    EXPECT_TRUE(torch::equal(item.value().slice(1, 0, 3), warm->named_parameters()[item.key()]));
  }
  auto narrow = small_denoiser();
  narrow.base_width = 8;
  DenoiserUNet other(narrow);
  EXPECT_THROW(warm_start(*warm, *other), ValidationError);
}

}  // namespace
}  // namespace segdiff
