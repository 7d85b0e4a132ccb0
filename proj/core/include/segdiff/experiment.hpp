#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "segdiff/pipeline.hpp"

namespace segdiff {

/// Fixed file layout under a run's output directory.
struct RunLayout {
  std::filesystem::path root;

  explicit RunLayout(const ExperimentConfig& config) : root(config.output_path()) {}
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path codec() const { return root / "codec.pt"; }
  std::filesystem::path coarse() const { return root / "coarse.pt"; }
  std::filesystem::path refiner() const { return root / "refiner.pt"; }
  std::filesystem::path predictions() const { return root / "predictions"; }
  std::filesystem::path rough() const { return root / "rough"; }
  std::filesystem::path ground_truth() const { return root / "gt"; }
  std::filesystem::path trajectories() const { return root / "trajectories"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path frequency() const { return root / "frequency"; }
};

/// True when the run needs a coarse segmenter (coarse rough maps or coarse alignment targets).
bool needs_coarse(const ExperimentConfig& config);

/// Trains the label codec on the training masks and writes it to the run layout.
LabelCodec fit_label_codec(const ExperimentConfig& config, const Corpus& corpus);
/// Trains the coarse segmenter and writes it to the run layout.
CoarseNet fit_coarse(const ExperimentConfig& config, const Corpus& corpus);
/// With data.rough = "coarse", fills every split's rough maps with coarse predictions.
void attach_coarse_rough(const ExperimentConfig& config, Corpus& corpus, CoarseNet coarse);

/// Warm-up plus refiner training; resumes from `resume` when given. The final
/// checkpoint lands at RunLayout::refiner(). `config` receives the resolved
/// latent width and target dimension.
Refiner fit_refiner(ExperimentConfig& config, const Corpus& corpus, LabelCodec codec,
                    std::shared_ptr<ImageCodec> image_codec, CoarseNet coarse,
                    const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Band changes of the initial and final stages, averaged over trajectories.
struct FrequencySummary {
  int trajectories = 0;
  int cut = 500;
  bool clean_estimate = false;  // decoded x0 estimates instead of z_t
  std::map<std::string, double> initial_change, final_change;
  RadialSpectrum initial_spectrum, final_spectrum;  // mean over trajectories (same-size maps)
  std::vector<std::string> notes;
};

FrequencySummary summarize_stages(const std::vector<Trajectory>& trajectories, const SnapshotDecoder& decode,
                                  int cut = 500, const std::vector<FrequencyBand>& bands = default_bands(),
                                  bool use_clean_estimate = false);
nlohmann::json frequency_summary_json(const FrequencySummary& summary);

struct ExperimentResult {
  ExperimentConfig config;
  MetricsReport rough;    // the rough maps fed to the refiner
  MetricsReport refined;  // refiner output
  FrequencySummary frequency;
  double seconds = 0.0;
};

/// Every stage from one config: data, codec, coarse (if needed), warm-up,
/// refiner, inference on the test split and evaluation. Writes masks, reports
/// and (when `record_trajectories`) trajectories into the run layout.
ExperimentResult run_experiment(ExperimentConfig config, bool record_trajectories = false);

/// Writes label maps as `<dir>/<id>.png`.
void write_masks(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                 const std::vector<LabelMap>& maps);

}  // namespace segdiff
