// segdiff: command-line front end over the core library.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "segdiff/dataset.hpp"
#include "segdiff/experiment.hpp"
#include "segdiff/log.hpp"

namespace fs = std::filesystem;
using namespace segdiff;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::string ablation;
  bool quiet = false;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.ablation.empty()) c = apply_ablation(c, g.ablation);
  if (!g.output_dir.empty()) c.output_dir = g.output_dir;
  c.validate();
  return c;
}

void print_report(const std::string& title, const MetricsReport& r) {
  std::cout << title << ": images " << r.images << "  mIoU " << r.miou << "  mF1 " << r.mean_f1 << "  kappa "
            << r.kappa << "  OA " << r.oa;
  for (const auto& [tol, v] : r.wfm) std::cout << "  WFm" << tol << " " << (v ? std::to_string(*v) : "n/a");
  std::cout << "\n";
  if (!r.missing.empty()) std::cout << "  " << r.missing.size() << " ground-truth masks had no prediction\n";
}

/// Loads the saved codec, or trains one when the run has none yet.
LabelCodec codec_for(const ExperimentConfig& c, const Corpus& corpus) {
  const RunLayout layout(c);
  if (fs::exists(layout.codec())) return load_codec(layout.codec());
  log::info("no label codec at ", layout.codec().string(), ", training one");
  return fit_label_codec(c, corpus);
}

CoarseNet coarse_for(const ExperimentConfig& c, const Corpus& corpus) {
  if (!needs_coarse(c)) return CoarseNet{nullptr};
  const RunLayout layout(c);
  if (fs::exists(layout.coarse())) return load_coarse(layout.coarse());
  log::info("no coarse model at ", layout.coarse().string(), ", training one");
  return fit_coarse(c, corpus);
}

// --- synth -------------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& out, int count) {
  auto c = resolve_config(g);
  c.data.root.clear();
  if (count > 0) c.data.train_count = count;
  const auto corpus = prepare_corpus(c);
  const fs::path root = out.empty() ? RunLayout(c).root / "data" : fs::path(out);
  auto write_split = [&](const char* split, const std::vector<Sample>& samples, const std::vector<LabelMap>& rough) {
    for (const auto& s : samples) save_sample(root / split, s);
    if (!rough.empty()) write_masks(root / split / "rough", samples, rough);
  };
  const auto train_rough = corpus.train_rough.empty()
                               ? degrade_all(corpus.train, c.data.degrade, stream_seed(c, SeedStream::degrade))
                               : corpus.train_rough;
  write_split("train", corpus.train, train_rough);
  write_split("val", corpus.val, corpus.val_rough);
  write_split("test", corpus.test, corpus.test_rough);
  std::cout << "wrote " << corpus.train.size() << "/" << corpus.val.size() << "/" << corpus.test.size()
            << " train/val/test samples to " << root.string() << "\n";
  return 0;
}

// --- training ------------------------------------------------------------------

int cmd_train_codec(const Globals& g) {
  const auto c = resolve_config(g);
  const auto corpus = prepare_corpus(c);
  fit_label_codec(c, corpus);
  std::cout << "label codec written to " << RunLayout(c).codec().string() << "\n";
  return 0;
}

int cmd_train_coarse(const Globals& g) {
  const auto c = resolve_config(g);
  const auto corpus = prepare_corpus(c);
  auto model = fit_coarse(c, corpus);
  std::cout << "coarse model written to " << RunLayout(c).coarse().string() << "  test mIoU "
            << coarse_miou(model, corpus.test) << "\n";
  return 0;
}

int cmd_train_refine(const Globals& g, const std::string& resume) {
  auto c = resolve_config(g);
  const RunLayout layout(c);
  fs::create_directories(layout.root);
  save_config(c, layout.config());
  auto corpus = prepare_corpus(c);
  auto codec = codec_for(c, corpus);
  auto coarse = coarse_for(c, corpus);
  attach_coarse_rough(c, corpus, coarse);
  auto image_codec = make_image_codec(c, corpus.train, codec);
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  try {
    fit_refiner(c, corpus, codec, image_codec, coarse, from);
  } catch (const TrainingError& e) {
    std::cerr << "training stopped: " << e.what() << "\n";
    if (!e.last_good_checkpoint().empty()) std::cerr << "last good state: " << e.last_good_checkpoint() << "\n";
    return 3;
  }
  std::cout << "refiner written to " << layout.refiner().string() << "\n";
  return 0;
}

// --- inference -----------------------------------------------------------------

int cmd_infer(const Globals& g, const std::string& checkpoint, int trajectories, const std::string& split) {
  auto c = resolve_config(g);
  const RunLayout layout(c);
  const fs::path ckpt = checkpoint.empty() ? layout.refiner() : fs::path(checkpoint);
  auto bundle = load_refiner(ckpt);
  // Data, seeds and sampling settings come from the invocation; the model from the checkpoint.
  auto corpus = prepare_corpus(c);
  attach_coarse_rough(c, corpus, c.data.rough == "coarse" ? coarse_for(c, corpus) : CoarseNet{nullptr});
  const auto& samples = split == "val" ? corpus.val : corpus.test;
  const auto& rough = split == "val" ? corpus.val_rough : corpus.test_rough;

  InferenceOptions io;
  io.cfg_weight = c.cfg_weight;
  io.clip_clean = c.clip_clean;
  io.seed = stream_seed(c, SeedStream::inference);
  io.record_trajectory = trajectories != 0;
  auto schedule = make_schedule(c.schedule);
  auto result = infer_refine(bundle.model, bundle.codec, *bundle.image_codec, schedule, samples, rough, io);

  std::vector<LabelMap> gts;
  for (const auto& s : samples) gts.push_back(s.label);
  write_masks(layout.predictions(), samples, result.labels);
  write_masks(layout.rough(), samples, rough);
  write_masks(layout.ground_truth(), samples, gts);
  const std::size_t keep =
      trajectories < 0 ? result.trajectories.size() : std::min<std::size_t>(trajectories, result.trajectories.size());
  for (std::size_t i = 0; i < keep; ++i)
    save_trajectory(result.trajectories[i], layout.trajectories() / result.trajectories[i].id);
  std::cout << "wrote " << result.labels.size() << " predictions to " << layout.predictions().string();
  if (keep > 0) std::cout << " and " << keep << " trajectories to " << layout.trajectories().string();
  std::cout << "\n";
  return 0;
}

// --- evaluation ----------------------------------------------------------------

int cmd_evaluate(const Globals& g, const std::string& pred, const std::string& gt, const std::string& out,
                 const std::string& stem) {
  const auto c = resolve_config(g);
  const RunLayout layout(c);
  const fs::path pred_dir = pred.empty() ? layout.predictions() : fs::path(pred);
  const fs::path gt_dir = gt.empty() ? layout.ground_truth() : fs::path(gt);
  const auto report = run_eval(pred_dir, gt_dir, eval_options(c));
  write_report(report, out.empty() ? layout.reports() : fs::path(out), stem);
  print_report(stem, report);
  return 0;
}

// --- frequency analysis ----------------------------------------------------------

void plot_curves(const fs::path& path, const std::vector<std::pair<std::string, std::vector<cv::Point2d>>>& curves,
                 bool log_y) {
  const int w = 640, h = 420, pad = 40;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto ty = [&](double y) { return log_y ? std::log10(std::max(y, 1e-12)) : y; };
  for (const auto& [name, pts] : curves)
    for (const auto& p : pts) x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, ty(p.y)), y1 = std::max(y1, ty(p.y));
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  auto map = [&](const cv::Point2d& p) {
    return cv::Point(pad + static_cast<int>((p.x - x0) / (x1 - x0) * (w - 2 * pad)),
                     h - pad - static_cast<int>((ty(p.y) - y0) / (y1 - y0) * (h - 2 * pad)));
  };
  cv::rectangle(img, {pad, pad}, {w - pad, h - pad}, cv::Scalar(0, 0, 0));
  auto label = [&](const std::string& text, cv::Point at) {
    cv::putText(img, text, at, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  };
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", x0);
  label(buf, {pad, h - pad + 15});
  std::snprintf(buf, sizeof buf, "%.3g", x1);
  label(buf, {w - pad - 20, h - pad + 15});
  label("frequency (cycles/pixel)", {w / 2 - 80, h - 10});
  std::snprintf(buf, sizeof buf, "%.2g", log_y ? std::pow(10.0, y1) : y1);
  label(buf, {2, pad + 4});
  std::snprintf(buf, sizeof buf, "%.2g", log_y ? std::pow(10.0, y0) : y0);
  label(buf, {2, h - pad});
  const cv::Scalar palette[] = {{200, 60, 30}, {30, 120, 220}, {40, 160, 40}, {160, 40, 160}, {20, 20, 20}, {0, 140, 200}};
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto colour = palette[k % std::size(palette)];
    const auto& pts = curves[k].second;
    for (std::size_t i = 1; i < pts.size(); ++i) cv::line(img, map(pts[i - 1]), map(pts[i]), colour, 2, cv::LINE_AA);
    cv::putText(img, curves[k].first, {w - pad - 150, pad + 18 + 18 * static_cast<int>(k)}, cv::FONT_HERSHEY_SIMPLEX,
                0.45, colour, 1, cv::LINE_AA);
  }
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw IoError("could not write " + path.string());
}

int cmd_analyze_freq(const Globals& g, const std::string& traj_dir, const std::string& checkpoint,
                     const std::string& out, int cut, bool clean) {
  const auto c = resolve_config(g);
  const RunLayout layout(c);
  const fs::path dir = traj_dir.empty() ? layout.trajectories() : fs::path(traj_dir);
  const fs::path out_dir = out.empty() ? layout.frequency() : fs::path(out);
  auto bundle = load_refiner(checkpoint.empty() ? layout.refiner() : fs::path(checkpoint));

  std::vector<Trajectory> trajectories;
  if (fs::exists(dir / "manifest.json")) {
    trajectories.push_back(load_trajectory(dir));
  } else if (fs::is_directory(dir)) {
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
      if (fs::exists(e.path() / "manifest.json")) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& d : subdirs) trajectories.push_back(load_trajectory(d));
  }
  if (trajectories.empty()) throw IoError("no trajectories under " + dir.string());

  const auto summary = summarize_stages(trajectories, class_probability_decoder(bundle.codec, *bundle.image_codec), cut,
                                        default_bands(), clean);
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "stages.json") << frequency_summary_json(summary).dump(2) << "\n";

  std::ofstream csv(out_dir / "spectrum.csv");
  csv << "stage,frequency,power\n";
  std::vector<std::pair<std::string, std::vector<cv::Point2d>>> spectra;
  for (const auto& [name, spec] : {std::pair{"initial", &summary.initial_spectrum}, std::pair{"final", &summary.final_spectrum}}) {
    std::vector<cv::Point2d> pts;
    for (std::size_t b = 0; b < spec->power.size(); ++b) {
      csv << name << "," << spec->frequency[b] << "," << spec->power[b] << "\n";
      if (b > 0) pts.emplace_back(spec->frequency[b], spec->power[b]);
    }
    if (!pts.empty()) spectra.emplace_back(std::string(name) + " stage", std::move(pts));
  }
  if (!spectra.empty()) plot_curves(out_dir / "spectrum.png", spectra, true);

  const auto schedule = make_schedule(c.schedule);
  std::ofstream wcsv(out_dir / "wiener.csv");
  wcsv << "timestep,alpha_bar,frequency,response\n";
  std::vector<std::pair<std::string, std::vector<cv::Point2d>>> curves;
  for (int t : {999, 750, 500, 250, 0}) {
    const auto curve = wiener_response(schedule.alpha_bar(t), frequency_grid(100));
    std::vector<cv::Point2d> pts;
    for (std::size_t i = 0; i < curve.frequency.size(); ++i) {
      wcsv << t << "," << curve.alpha_bar << "," << curve.frequency[i] << "," << curve.response[i] << "\n";
      pts.emplace_back(curve.frequency[i], curve.response[i]);
    }
    curves.emplace_back("t=" + std::to_string(t), std::move(pts));
  }
  plot_curves(out_dir / "wiener.png", curves, false);

  std::cout << "stage change over " << summary.trajectories << " trajectories (cut " << cut << "):\n";
  for (const auto& [band, v] : summary.initial_change) {
    const auto f = summary.final_change.find(band);
    std::cout << "  " << band << "  initial " << v << "  final "
              << (f == summary.final_change.end() ? std::string("n/a") : std::to_string(f->second)) << "\n";
  }
  for (const auto& n : summary.notes) std::cout << "  note: " << n << "\n";
  std::cout << "outputs in " << out_dir.string() << "\n";
  return 0;
}

// --- report ----------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out) {
  nlohmann::json table = nlohmann::json::array();
  std::cout << "| run | report | images | mIoU | mF1 | kappa | WFm1 | WFm3 | WFm5 |\n|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& d : run_dirs) {
    for (const char* stem : {"rough", "refined", "report"}) {
      const fs::path p = fs::path(d) / "reports" / (std::string(stem) + ".json");
      if (!fs::exists(p)) continue;
      nlohmann::json j;
      std::ifstream(p) >> j;
      validate_report_json(j);
      table.push_back({{"run", d}, {"report", stem}, {"metrics", j}});
      auto wfm = [&](const char* tol) -> std::string {
        const auto& w = j.at("wfm");
        return w.contains(tol) && !w.at(tol).is_null() ? std::to_string(w.at(tol).get<double>()) : "n/a";
      };
      std::cout << "| " << fs::path(d).filename().string() << " | " << stem << " | " << j.at("images") << " | "
                << j.at("miou").get<double>() << " | " << j.at("mean_f1").get<double>() << " | "
                << j.at("kappa").get<double>() << " | " << wfm("1") << " | " << wfm("3") << " | " << wfm("5")
                << " |\n";
    }
  }
  if (table.empty()) throw IoError("no reports found in the given run directories");
  if (!out.empty()) std::ofstream(out) << table.dump(2) << "\n";
  return 0;
}

// --- run -----------------------------------------------------------------------------

int cmd_run(const Globals& g, bool trajectories) {
  const auto result = run_experiment(resolve_config(g), trajectories);
  print_report("rough", result.rough);
  print_report("refined", result.refined);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation refinement with conditional label diffusion"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("-c,--config", g.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("-o,--output", g.output_dir, std::string("run directory (default: $") + kOutputRootEnv + "/<name>)");
  app.add_flag("-q,--quiet", g.quiet, "warnings and errors only");
  int threads = 0;
  app.add_option("--threads", threads, "torch intra-op threads (0: library default)");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset (images, masks, rough maps) to disk");
  std::string synth_out;
  int synth_count = 0;
  synth->add_option("--out", synth_out, "dataset root (default: <run>/data)");
  synth->add_option("--spec", g.config_path, "config supplying the scene spec (same as --config)")
      ->check(CLI::ExistingFile);
  synth->add_option("--count", synth_count, "training scenes (default: data.train_count)")->check(CLI::PositiveNumber);

  app.add_subcommand("train-codec", "train the label codec");
  app.add_subcommand("train-coarse", "train the coarse segmenter");

  auto* refine = app.add_subcommand("train-refine", "warm up and train the refiner");
  std::string resume;
  refine->add_option("--ablation", g.ablation, "ablation preset")->check(CLI::IsMember({"A", "B", "C"}));
  refine->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  auto* infer = app.add_subcommand("infer", "refine the rough maps of a split");
  std::string checkpoint, split = "test";
  int trajectories = 0;
  infer->add_option("--checkpoint", checkpoint, "refiner checkpoint (default: <run>/refiner.pt)");
  infer->add_option("--trajectories", trajectories, "dump this many sampling trajectories (-1: all)");
  infer->add_option("--split", split)->check(CLI::IsMember({"val", "test"}));
  infer->add_option("--ablation", g.ablation, "ablation preset")->check(CLI::IsMember({"A", "B", "C"}));

  auto* evaluate = app.add_subcommand("evaluate", "score predicted masks against ground truth");
  std::string pred_dir, gt_dir, report_out, stem = "report";
  evaluate->add_option("--pred", pred_dir, "prediction masks (default: <run>/predictions)");
  evaluate->add_option("--gt", gt_dir, "ground-truth masks (default: <run>/gt)");
  evaluate->add_option("--out", report_out, "report directory (default: <run>/reports)");
  evaluate->add_option("--name", stem, "report file stem");
  evaluate->add_option("--ablation", g.ablation, "ablation preset")->check(CLI::IsMember({"A", "B", "C"}));

  auto* freq = app.add_subcommand("analyze-freq", "radial spectra, stage changes and Wiener curves");
  std::string traj_dir, freq_out;
  int cut = 500;
  bool clean = false;
  freq->add_option("--trajectories", traj_dir, "trajectory directory (default: <run>/trajectories)");
  freq->add_option("--checkpoint", checkpoint, "refiner checkpoint, for its label decoder");
  freq->add_option("--out", freq_out, "output directory (default: <run>/frequency)");
  freq->add_option("--cut", cut, "timestep separating the initial and final stages");
  freq->add_flag("--clean", clean, "decompose the clean estimates instead of the noisy latents");
  freq->add_option("--ablation", g.ablation, "ablation preset")->check(CLI::IsMember({"A", "B", "C"}));

  auto* report = app.add_subcommand("report", "tabulate the reports of several runs");
  std::vector<std::string> runs;
  std::string table_out;
  report->add_option("runs", runs, "run directories")->required();
  report->add_option("--out", table_out, "also write the table as JSON");

  auto* show = app.add_subcommand("config", "print the resolved config as JSON");
  show->add_option("--ablation", g.ablation, "ablation preset")->check(CLI::IsMember({"A", "B", "C"}));

  auto* run = app.add_subcommand("run", "every stage from one config");
  bool keep_traj = false;
  run->add_option("--ablation", g.ablation, "ablation preset")->check(CLI::IsMember({"A", "B", "C"}));
  run->add_flag("--trajectories", keep_traj, "record trajectories and the stage summary");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed;
  if (g.quiet) log::set_level(log::Level::kWarn);
  if (threads > 0) torch::set_num_threads(threads);

  try {
    if (synth->parsed()) return cmd_synth(g, synth_out, synth_count);
    if (app.got_subcommand("train-codec")) return cmd_train_codec(g);
    if (app.got_subcommand("train-coarse")) return cmd_train_coarse(g);
    if (refine->parsed()) return cmd_train_refine(g, resume);
    if (infer->parsed()) return cmd_infer(g, checkpoint, trajectories, split);
    if (evaluate->parsed()) return cmd_evaluate(g, pred_dir, gt_dir, report_out, stem);
    if (freq->parsed()) return cmd_analyze_freq(g, traj_dir, checkpoint, freq_out, cut, clean);
    if (report->parsed()) return cmd_report(runs, table_out);
    if (run->parsed()) return cmd_run(g, keep_traj);
    if (show->parsed()) {
      std::cout << nlohmann::json(resolve_config(g)).dump(2) << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
