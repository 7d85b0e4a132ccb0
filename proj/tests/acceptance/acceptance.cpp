// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion ids...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <torch/torch.h>

#include "../unit/oracles.hpp"
#include "segdiff/align.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/experiment.hpp"
#include "segdiff/freq.hpp"
#include "segdiff/label_codec.hpp"
#include "segdiff/log.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/refiner.hpp"
#include "segdiff/schedule.hpp"
#include "segdiff/synth.hpp"

using namespace segdiff;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

// --- 1 ----------------------------------------------------------------------

Outcome codec_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  SceneSpec spec;
  spec.num_classes = 6;
  spec.seed = 11;
  std::vector<LabelMap> train, held_out;
  for (const auto& s : generate_corpus(spec, 24)) train.push_back(s.label);
  spec.seed = 12;
  for (const auto& s : generate_corpus(spec, 8)) held_out.push_back(s.label);
  CodecTrainOptions options;
  options.seed = 1;
  const auto codec = train_codec(train, 6, options).codec;
  const double acc = codec_round_trip_accuracy(codec, held_out);
  const double secs = seconds_since(t0);
  return {acc >= 0.999 && secs < 300.0,
          fmt("K=6 held-out pixel accuracy %.5f in %.1f s (need >= 0.999, < 300 s)", acc, secs)};
}

// --- 2 ----------------------------------------------------------------------

Outcome schedule_exactness() {
  const auto s = make_schedule();
  bool decreasing = true;
  for (std::size_t t = 1; t < s.alpha_bars.size(); ++t) decreasing &= s.alpha_bars[t] < s.alpha_bars[t - 1];
  const double err = std::abs(s.alpha_bars.front() - 0.99915);
  const bool ends = s.betas.front() == 8.5e-4 && s.betas.back() == 1.2e-2;
  return {err <= 1e-8 && decreasing && ends,
          fmt("|alpha_bar[0] - 0.99915| = %.2e, strictly decreasing: %s, beta endpoints %.6g / %.6g exact: %s", err,
              decreasing ? "yes" : "no", s.betas.front(), s.betas.back(), ends ? "yes" : "no")};
}

// --- 3 ----------------------------------------------------------------------

Outcome forward_variance() {
  const auto s = make_schedule();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
  const auto z0 = torch::randn({200000}, gen, torch::kFloat64) * 0.6 + 0.2;
  const double var0 = z0.var().item<double>();
  bool pass = true;
  std::ostringstream detail;
  for (int t : {100, 500, 900}) {
    const auto eps = torch::randn({200000}, gen, torch::kFloat64);
    const double var = add_noise(z0, eps, t, s).var().item<double>();
    const double expected = s.alpha_bars[t] * var0 + (1 - s.alpha_bars[t]);
    const double rel = std::abs(var - expected) / expected;
    pass &= rel < 0.02;
    detail << fmt("t=%d rel.err %.4f; ", t, rel);
  }
  detail << "(need < 0.02, 2e5 samples)";
  return {pass, detail.str()};
}

// --- 4 ----------------------------------------------------------------------

Outcome ddim_oracle() {
  const auto s = make_schedule();
  torch::manual_seed(4);
  const auto z0 = torch::rand({2, 3, 16, 16}, torch::kFloat64) * 2 - 1;
  const auto eps = torch::randn({2, 3, 16, 16}, torch::kFloat64);
  const auto& steps = s.inference_timesteps;
  auto z = add_noise(z0, eps, steps.front(), s);
  for (std::size_t i = 0; i < steps.size(); ++i)
    z = ddim_step(z, eps, steps[i], i + 1 < steps.size() ? steps[i + 1] : kCleanTimestep, s);
  const double multi = max_abs(z, z0);

  double single = 0.0;
  for (int t : {999, 500, 37}) {
    const auto zt = add_noise(z0, eps, t, s);
    single = std::max(single, max_abs(ddim_step(zt, eps, t, kCleanTimestep, s), z0));
    single = std::max(single, max_abs(ddim_step(zt, eps, t, 0, s), add_noise(z0, eps, 0, s)));
  }
  return {steps.size() == 25 && multi <= 1e-4 && single <= 1e-5,
          fmt("%zu-step reconstruction max|err| %.2e (need <= 1e-4); single step to 0 max|err| %.2e (need <= 1e-5)",
              steps.size(), multi, single)};
}

// --- 5 ----------------------------------------------------------------------

Outcome cubic_sampling() {
  std::mt19937_64 rng(5);
  const auto t = sample_timesteps(100000, 1000, true, rng);
  const double p = (t >= 500).to(torch::kFloat64).mean().item<double>();
  return {std::abs(p - 0.7937) <= 0.02, fmt("P(t >= T/2) = %.4f over 1e5 draws (need 0.7937 +- 0.02)", p)};
}

// --- 6 ----------------------------------------------------------------------

Outcome zero_init_neutrality() {
  torch::manual_seed(6);
  RefinerConfig rc;
  rc.align.enabled = false;
  rc.denoiser.latent_channels = 3;
  DenoiserConfig dc = rc.denoiser;
  dc.condition_channels = 0;
  DenoiserUNet warm(dc);
  Refiner refiner(rc);
  refiner->init_from(warm);
  torch::NoGradGuard no_grad;
  const auto z = torch::randn({2, 3, 64, 64});
  const auto t = torch::tensor({20, 700}, torch::kInt64);
  const double diff =
      max_abs(refiner->forward(z, torch::randn_like(z), torch::randn_like(z), t).eps, warm->forward(z, {}, t).eps);
  return {diff <= 1e-6, fmt("untrained guidance vs bare denoiser max|diff| %.2e at 64x64 (need <= 1e-6)", diff)};
}

// --- 7 ----------------------------------------------------------------------

Outcome repa_bounds() {
  torch::manual_seed(7);
  float lo = 1, hi = -1;
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = torch::randn({4, 64, 16}) * std::pow(10.0, trial % 7 - 3);
    const auto b = trial % 3 == 0 ? -a : torch::randn({4, 64, 16});
    const float v = repa_loss(a, b).loss.item<float>();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const auto x = torch::randn({4, 64, 16});
  const float aligned = repa_loss(x, x * 3.0).loss.item<float>();
  const auto mse = torch::rand({}) + 0.1;
  const auto repa = repa_loss(x, torch::randn_like(x)).loss;
  bool exact = true;
  for (int step : {200, 201, 5000}) {
    const auto total = total_loss(mse, repa, step, 0.5, 200);
    exact &= total.is_same(mse) && total.item<float>() == mse.item<float>();
  }
  const bool before = total_loss(mse, repa, 199, 0.5, 200).item<float>() != mse.item<float>();
  const bool pass = lo >= -1.0f && hi <= 1.0f && std::abs(aligned + 1.0f) <= 1e-6f && exact && before;
  return {pass, fmt("loss range [%.4f, %.4f], aligned %.7f, total == mse after stop: %s", lo, hi, aligned,
                    exact ? "bit-exact" : "NO")};
}

// --- 8 ----------------------------------------------------------------------

Outcome wiener_formula() {
  const double half = wiener_response(0.5, {1.0}).response[0];
  bool dc = true, dominance = true;
  const auto grid = frequency_grid(100);
  const std::vector<double> levels = {0.999, 0.9, 0.5, 0.1, 0.01};
  for (double ab : levels) dc &= wiener_response(ab, {0.0}).response[0] == 1.0;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const auto hi = wiener_response(levels[i], grid), lo = wiener_response(levels[i + 1], grid);
    for (std::size_t k = 0; k < grid.size(); ++k) dominance &= hi.response[k] >= lo.response[k];
  }
  return {half == 0.5 && dc && dominance, fmt("H(0.5, 1) = %.17g, H(0) = 1 for all: %s, dominance on 100 points: %s",
                                              half, dc ? "yes" : "no", dominance ? "yes" : "no")};
}

// --- 9 ----------------------------------------------------------------------

Outcome wfm_sanity() {
  SceneSpec spec;
  spec.seed = 9;
  const auto corpus = generate_corpus(spec, 50);
  const auto gt = class_mask(corpus[0].label, 1);
  const double perfect = weighted_fmeasure(gt, gt);
  const double empty = weighted_fmeasure(make_binary_map(gt.height, gt.width), gt);

  double oracle_err = 0.0;
  for (int g = 0; g < 16; ++g) {
    for (int p = 0; p < 16; ++p) {
      BinaryMap a = make_binary_map(2, 2), b = make_binary_map(2, 2);
      for (int i = 0; i < 4; ++i) a.data[i] = (p >> i) & 1, b.data[i] = (g >> i) & 1;
      oracle_err = std::max(oracle_err, std::abs(weighted_fmeasure(a, b) - testing::wfm_oracle(a, b)));
    }
  }

  std::vector<LabelMap> preds, gts;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    gts.push_back(corpus[i].label);
    preds.push_back(degrade_label(corpus[i].label, DegradeParams{3, 0.1, 0.0, 3, 900 + i}));
  }
  EvalOptions eo;
  const auto r = evaluate_corpus(preds, gts, eo);
  const double w1 = r.wfm.at(1).value_or(NAN), w3 = r.wfm.at(3).value_or(NAN), w5 = r.wfm.at(5).value_or(NAN);
  const bool pass = perfect == 1.0 && empty == 0.0 && oracle_err <= 1e-10 && w1 <= w3 && w3 <= w5;
  return {pass, fmt("perfect %.3f, empty %.3f, 2x2 oracle max|err| %.1e, WFm1/3/5 = %.4f <= %.4f <= %.4f", perfect,
                    empty, oracle_err, w1, w3, w5)};
}

// --- 10-12: end-to-end runs -------------------------------------------------

ExperimentConfig end_to_end_config(const std::string& preset) {
  ExperimentConfig c;
  c.name = "acceptance";
  c.seed = 2024;
  c.num_classes = 3;
  c.data.scene.width = c.data.scene.height = 64;
  c.data.scene.num_classes = 3;
  c.data.train_count = 200;
  c.data.val_count = 8;
  c.data.test_count = 50;
  c.data.degrade = {3, 0.1, 0.0, 0, 0};
  c.codec.steps = 1000;
  c.coarse.widths = {16, 32, 64, 128};
  c.coarse_train.steps = 300;
  c.coarse_train.validate_every = 0;
  c.refiner.denoiser.base_width = 16;
  c.refiner.guidance.max_tokens = 256;
  c.warmup = {500, 8, 1e-3, 250, 0, 0};
  c.train = {4000, 4, 1e-3, 500, 0, 0};
  c = apply_ablation(c, preset);
  if (std::getenv(kOutputRootEnv) == nullptr)
    c.output_dir = (std::filesystem::temp_directory_path() / "segdiff_acceptance" / c.name).string();
  return c;
}

std::map<std::string, ExperimentResult> runs;

const ExperimentResult& end_to_end(const std::string& preset) {
  if (auto it = runs.find(preset); it != runs.end()) return it->second;
  // Run from a config file, the same path the command-line tool takes.
  auto config = end_to_end_config(preset);
  const auto path = std::filesystem::temp_directory_path() / ("segdiff_acceptance_" + preset + ".json");
  save_config(config, path);
  auto result = run_experiment(load_config(path), preset == "C");
  std::fprintf(stderr, "  run %s: %.0f s\n", preset.c_str(), result.seconds);
  return runs.emplace(preset, std::move(result)).first->second;
}

double wfm3(const MetricsReport& r) { return r.wfm.at(3).value_or(NAN); }

Outcome refinement_trend() {
  const auto& r = end_to_end("C");
  const double drop = (r.rough.miou - r.refined.miou) * 100.0;
  const bool pass = wfm3(r.refined) > wfm3(r.rough) && drop < 1.0 && r.seconds <= 7200.0;
  return {pass, fmt("WFm3 rough %.4f -> refined %.4f; mIoU %.4f -> %.4f (drop %.2f pt, need < 1); %.0f s", wfm3(r.rough),
                    wfm3(r.refined), r.rough.miou, r.refined.miou, drop, r.seconds)};
}

Outcome ablation_harness() {
  const auto& a = end_to_end("A");
  const auto& b = end_to_end("B");
  const auto& c = end_to_end("C");
  bool comparable = true;
  for (const auto* r : {&a, &b, &c}) {
    const auto j = report_to_json(r->refined);
    try {
      validate_report_json(j);
    } catch (const std::exception&) {
      comparable = false;
    }
    comparable &= r->refined.images == a.refined.images && r->refined.wfm.size() == a.refined.wfm.size();
  }
  return {comparable && wfm3(b.refined) >= wfm3(a.refined),
          fmt("WFm3 A %.4f, B %.4f, C %.4f; reports comparable: %s (need B >= A)", wfm3(a.refined), wfm3(b.refined),
              wfm3(c.refined), comparable ? "yes" : "no")};
}

Outcome frequency_tooling() {
  torch::manual_seed(12);
  double parseval = 0.0;
  for (auto [h, w] : {std::pair{64, 64}, std::pair{31, 17}, std::pair{1, 40}}) {
    const auto x = torch::randn({h, w}, torch::kFloat64);
    const double e = x.square().sum().item<double>();
    parseval = std::max(parseval, std::abs(radial_spectrum(x).total_energy() - e) / e);
  }
  const auto& r = end_to_end("C");
  const auto& f = r.frequency;
  const double initial = f.initial_change.count("low") ? f.initial_change.at("low") : NAN;
  const double final_ = f.final_change.count("low") ? f.final_change.at("low") : NAN;
  return {parseval <= 1e-6 && f.trajectories > 0 && final_ < initial,
          fmt("Parseval rel.err %.1e; low-band change initial %.4g vs final %.4g over %d trajectories", parseval,
              initial, final_, f.trajectories)};
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"codec round-trip", codec_round_trip},
      {"schedule exactness", schedule_exactness},
      {"forward-process variance", forward_variance},
      {"DDIM oracle inversion", ddim_oracle},
      {"cubic timestep law", cubic_sampling},
      {"zero-init neutrality", zero_init_neutrality},
      {"REPA bounds", repa_bounds},
      {"Wiener response", wiener_formula},
      {"WFm sanity", wfm_sanity},
      {"end-to-end refinement", refinement_trend},
      {"ablation harness", ablation_harness},
      {"frequency tooling", frequency_tooling},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%2d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
