#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "segdiff/diffusion.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/refiner.hpp"
#include "segdiff/schedule.hpp"
#include "segdiff/synth.hpp"

using namespace segdiff;

namespace {

void BM_WeightedFMeasure(benchmark::State& state) {
  SceneSpec spec;
  spec.width = spec.height = static_cast<int>(state.range(0));
  const auto scene = generate_scene(spec);
  const auto gt = class_mask(scene.label, 1);
  const auto pred = class_mask(degrade_label(scene.label, DegradeParams{3, 0.1, 0.0, 3, 1}), 1);
  for (auto _ : state) benchmark::DoNotOptimize(weighted_fmeasure(pred, gt));
  state.SetComplexityN(state.range(0) * state.range(0));
}
BENCHMARK(BM_WeightedFMeasure)->Arg(64)->Arg(128)->Arg(256)->Complexity();

void BM_EvaluateCorpus(benchmark::State& state) {
  SceneSpec spec;
  std::vector<LabelMap> preds, gts;
  for (const auto& s : generate_corpus(spec, 16)) {
    gts.push_back(s.label);
    preds.push_back(degrade_label(s.label, DegradeParams{3, 0.1, 0.0, 3, 2}));
  }
  EvalOptions opt;
  opt.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_corpus(preds, gts, opt));
}
BENCHMARK(BM_EvaluateCorpus)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_DdimStep(benchmark::State& state) {
  const auto schedule = make_schedule();
  const auto z = torch::randn({8, 3, 64, 64});
  const auto eps = torch::randn_like(z);
  for (auto _ : state) benchmark::DoNotOptimize(ddim_step(z, eps, 500, 458, schedule));
}
BENCHMARK(BM_DdimStep);

RefinerConfig bench_refiner(int max_tokens) {
  RefinerConfig rc;
  rc.denoiser.base_width = 16;
  rc.guidance.max_tokens = max_tokens;
  rc.align.enabled = false;
  return rc;
}

void BM_RefinerForward(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  Refiner model(bench_refiner(static_cast<int>(state.range(0))));
  torch::NoGradGuard no_grad;
  const auto z = torch::randn({4, 3, 64, 64});
  const auto t = torch::full({4}, 500, torch::kInt64);
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(z, z, z, t).eps);
}
BENCHMARK(BM_RefinerForward)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_RefinerTrainStep(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  Refiner model(bench_refiner(256));
  torch::optim::Adam opt(model->trainable_parameters(), torch::optim::AdamOptions(1e-3));
  const auto z = torch::randn({4, 3, 64, 64});
  const auto t = torch::randint(0, 1000, {4}, torch::kInt64);
  for (auto _ : state) {
    auto loss = model->forward(z, z, z, t).eps.square().mean();
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
}
BENCHMARK(BM_RefinerTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
