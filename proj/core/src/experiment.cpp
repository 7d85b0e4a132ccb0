#include "segdiff/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "segdiff/dataset.hpp"
#include "segdiff/log.hpp"

namespace segdiff {

bool needs_coarse(const ExperimentConfig& config) {
  return config.data.rough == "coarse" || (config.refiner.align.enabled && config.align_targets == "coarse");
}

LabelCodec fit_label_codec(const ExperimentConfig& config, const Corpus& corpus) {
  std::vector<LabelMap> labels;
  labels.reserve(corpus.train.size());
  for (const auto& s : corpus.train) labels.push_back(s.label);
  CodecTrainOptions options = config.codec;
  options.seed = stream_seed(config, SeedStream::codec);
  auto codec = train_codec(labels, config.num_classes, options).codec;
  log::info("label codec round-trip accuracy ", codec_round_trip_accuracy(codec, labels));
  const RunLayout layout(config);
  std::filesystem::create_directories(layout.root);
  save_codec(codec, layout.codec());
  return codec;
}

CoarseNet fit_coarse(const ExperimentConfig& config, const Corpus& corpus) {
  CoarseConfig cc = config.coarse;
  cc.num_classes = config.num_classes;
  CoarseTrainOptions options = config.coarse_train;
  options.seed = stream_seed(config, SeedStream::coarse);
  const auto& val = corpus.val.empty() ? corpus.train : corpus.val;
  auto result = train_coarse(corpus.train, val, cc, options);
  const RunLayout layout(config);
  std::filesystem::create_directories(layout.root);
  save_coarse(result.model, layout.coarse());
  return result.model;
}

void attach_coarse_rough(const ExperimentConfig& config, Corpus& corpus, CoarseNet coarse) {
  if (config.data.rough != "coarse") return;
  if (!coarse) throw ConfigError("data.rough = coarse needs a trained coarse model");
  corpus.train_rough = predict_coarse(coarse, corpus.train);
  corpus.val_rough = predict_coarse(coarse, corpus.val);
  corpus.test_rough = predict_coarse(coarse, corpus.test);
}

Refiner fit_refiner(ExperimentConfig& config, const Corpus& corpus, LabelCodec codec,
                    std::shared_ptr<ImageCodec> image_codec, CoarseNet coarse,
                    const std::optional<std::filesystem::path>& resume) {
  auto targets = make_align_targets(config, coarse);
  auto model = make_refiner(config, *image_codec, targets.get());
  // A resumed run restores the weights; the warm-up would be overwritten.
  if (!resume) model->init_from(warmup_denoiser(config, codec, *image_codec, corpus.train));
  RefinerTrainer trainer(config, codec, image_codec, model, targets);
  trainer.set_data(corpus.train, corpus.train_rough, corpus.val, corpus.val_rough);
  if (resume) trainer.resume(*resume);
  trainer.run(RunLayout(config).refiner());
  return model;
}

FrequencySummary summarize_stages(const std::vector<Trajectory>& trajectories, const SnapshotDecoder& decode, int cut,
                                  const std::vector<FrequencyBand>& bands, bool use_clean_estimate) {
  FrequencySummary s;
  s.cut = cut;
  s.clean_estimate = use_clean_estimate;
  std::map<std::string, int> initial_n, final_n;
  int initial_spectra = 0, final_spectra = 0;
  auto accumulate = [](RadialSpectrum& sum, const RadialSpectrum& add, int& n) {
    if (add.power.empty()) return;
    if (n == 0) {
      sum = add;
    } else if (sum.power.size() == add.power.size()) {
      for (std::size_t b = 0; b < add.power.size(); ++b) sum.power[b] += add.power[b];
    } else {
      return;
    }
    ++n;
  };
  for (const auto& t : trajectories) {
    const auto d = stage_decompose(t, decode, cut, bands, use_clean_estimate);
    for (const auto& note : d.notes) s.notes.push_back(t.id + ": " + note);
    accumulate(s.initial_spectrum, d.initial.mean_spectrum, initial_spectra);
    accumulate(s.final_spectrum, d.final.mean_spectrum, final_spectra);
    if (d.initial.transitions > 0) {
      for (const auto& [band, v] : d.initial.mean_change) {
        s.initial_change[band] += v;
        ++initial_n[band];
      }
    }
    if (d.final.transitions > 0) {
      for (const auto& [band, v] : d.final.mean_change) {
        s.final_change[band] += v;
        ++final_n[band];
      }
    }
    ++s.trajectories;
  }
  for (auto& [band, v] : s.initial_change) v /= initial_n[band];
  for (auto& [band, v] : s.final_change) v /= final_n[band];
  for (auto& p : s.initial_spectrum.power) p /= std::max(1, initial_spectra);
  for (auto& p : s.final_spectrum.power) p /= std::max(1, final_spectra);
  return s;
}

nlohmann::json frequency_summary_json(const FrequencySummary& summary) {
  return {{"trajectories", summary.trajectories},
          {"cut", summary.cut},
          {"snapshots", summary.clean_estimate ? "clean_estimate" : "latent"},
          {"initial_change", summary.initial_change},
          {"final_change", summary.final_change},
          {"notes", summary.notes}};
}

void write_masks(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                 const std::vector<LabelMap>& maps) {
  if (samples.size() != maps.size()) throw ValidationError("one mask per sample expected");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) write_mask_png(dir / (samples[i].id + ".png"), maps[i]);
}

ExperimentResult run_experiment(ExperimentConfig config, bool record_trajectories) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const RunLayout layout(config);
  std::filesystem::create_directories(layout.root);
  save_config(config, layout.config());
  log::info("run '", config.name, "' writing to ", layout.root.string());

  auto corpus = prepare_corpus(config);
  auto codec = fit_label_codec(config, corpus);
  CoarseNet coarse{nullptr};
  if (needs_coarse(config)) {
    coarse = fit_coarse(config, corpus);
    attach_coarse_rough(config, corpus, coarse);
  }
  auto image_codec = make_image_codec(config, corpus.train, codec);
  auto model = fit_refiner(config, corpus, codec, image_codec, coarse);

  InferenceOptions io;
  io.cfg_weight = config.cfg_weight;
  io.clip_clean = config.clip_clean;
  io.seed = stream_seed(config, SeedStream::inference);
  io.record_trajectory = record_trajectories;
  const auto inferred =
      infer_refine(model, codec, *image_codec, make_schedule(config.schedule), corpus.test, corpus.test_rough, io);

  std::vector<LabelMap> gts;
  for (const auto& s : corpus.test) gts.push_back(s.label);
  write_masks(layout.predictions(), corpus.test, inferred.labels);
  write_masks(layout.rough(), corpus.test, corpus.test_rough);
  write_masks(layout.ground_truth(), corpus.test, gts);

  ExperimentResult result;
  const auto eo = eval_options(config);
  result.rough = evaluate_corpus(corpus.test_rough, gts, eo);
  result.refined = evaluate_corpus(inferred.labels, gts, eo);
  write_report(result.rough, layout.reports(), "rough");
  write_report(result.refined, layout.reports(), "refined");

  if (record_trajectories) {
    for (const auto& t : inferred.trajectories) save_trajectory(t, layout.trajectories() / t.id);
    result.frequency = summarize_stages(inferred.trajectories, class_probability_decoder(codec, *image_codec));
    std::filesystem::create_directories(layout.frequency());
    std::ofstream(layout.frequency() / "stages.json") << frequency_summary_json(result.frequency).dump(2) << "\n";
  }
  result.config = std::move(config);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log::info("run '", result.config.name, "' finished in ", result.seconds, " s");
  return result;
}

}  // namespace segdiff
