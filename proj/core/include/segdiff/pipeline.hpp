#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segdiff/align.hpp"
#include "segdiff/config.hpp"
#include "segdiff/freq.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/refiner.hpp"
#include "segdiff/rng.hpp"
#include "segdiff/schedule.hpp"

namespace segdiff {

/// Train/val/test samples plus the rough maps paired with val and test.
struct Corpus {
  std::vector<Sample> train, val, test;
  std::vector<LabelMap> train_rough, val_rough, test_rough;  // train_rough may be empty (resampled)
};

/// Synthesises (data.root empty) or loads the corpus; rough maps come from
/// degrade_label unless data.rough is "files" (or "coarse", filled by the caller).
Corpus prepare_corpus(const ExperimentConfig& config);

/// Deterministic degrade_label of every sample, seeds derived per index.
std::vector<LabelMap> degrade_all(const std::vector<Sample>& samples, const DegradeParams& params, std::uint64_t seed);

std::shared_ptr<ImageCodec> make_image_codec(const ExperimentConfig& config, const std::vector<Sample>& train,
                                             LabelCodec codec);

/// Tensors fed to the denoiser for a batch: image latents c_I (images mapped
/// to [-1, 1] first) and encoded label embeddings.
torch::Tensor image_latents(const ImageCodec& image_codec, const torch::Tensor& images);
torch::Tensor label_latents(const ImageCodec& image_codec, LabelCodec codec, const torch::Tensor& labels);

/// Alignment target provider named by config.align_targets ("coarse" needs
/// `coarse`); nullptr when alignment is disabled.
std::shared_ptr<AlignTargetProvider> make_align_targets(const ExperimentConfig& config, CoarseNet coarse);

/// Builds the refiner after fixing the config's latent width and target
/// dimension from the codec and target provider (both written back).
Refiner make_refiner(ExperimentConfig& config, const ImageCodec& image_codec, const AlignTargetProvider* targets);

/// Unconditional label diffusion used to initialise the refiner's denoiser and
/// the frozen pseudo-siamese encoder.
DenoiserUNet warmup_denoiser(const ExperimentConfig& config, LabelCodec codec, const ImageCodec& image_codec,
                             const std::vector<Sample>& train);

struct ValidationPoint {
  int step = 0;
  double miou = 0.0;
  std::optional<double> wfm;  // at the first configured tolerance >= 3, else the first
};

/// Owns the refiner's mutable training state (model, optimiser, rng, step).
class RefinerTrainer {
 public:
  RefinerTrainer(ExperimentConfig config, LabelCodec codec, std::shared_ptr<ImageCodec> image_codec, Refiner model,
                 std::shared_ptr<AlignTargetProvider> targets);

  /// `train_rough` empty: a fresh degradation is drawn per example.
  void set_data(std::vector<Sample> train, std::vector<LabelMap> train_rough, std::vector<Sample> val,
                std::vector<LabelMap> val_rough);

  /// One optimisation step; returns the total loss. Throws TrainingError on a
  /// non-finite loss after writing the pre-step state to `last_good_path()`.
  double step();
  /// Steps until `config.train.steps`, with logging, validation and checkpoints.
  void run(const std::filesystem::path& checkpoint_path);

  void save(const std::filesystem::path& path);
  /// Restores model, optimiser, rng, step and histories.
  void resume(const std::filesystem::path& path);

  int current_step() const { return step_; }
  const std::vector<double>& loss_history() const { return losses_; }
  const std::vector<ValidationPoint>& validation_history() const { return validation_; }
  Refiner model() const { return model_; }
  Rng& rng() { return rng_; }
  std::filesystem::path last_good_path() const;
  ValidationPoint validate();

 private:
  ExperimentConfig config_;
  LabelCodec codec_;
  std::shared_ptr<ImageCodec> image_codec_;
  Refiner model_;
  std::shared_ptr<AlignTargetProvider> targets_;
  NoiseSchedule schedule_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  Rng rng_;
  int step_ = 0;
  std::vector<double> losses_;
  std::vector<ValidationPoint> validation_;
  std::vector<Sample> train_, val_;
  std::vector<LabelMap> train_rough_, val_rough_;
  std::filesystem::path checkpoint_dir_;
};

/// Everything inference needs, reloaded from a refiner checkpoint.
struct RefinerBundle {
  ExperimentConfig config;
  Refiner model{nullptr};
  LabelCodec codec{nullptr};
  std::shared_ptr<ImageCodec> image_codec;
  NoiseSchedule schedule;
};

void save_refiner_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, Refiner model,
                             LabelCodec codec, const ImageCodec& image_codec, int step,
                             torch::optim::Optimizer* optimizer, const Rng* rng, const std::vector<double>& losses,
                             const std::vector<ValidationPoint>& validation);
RefinerBundle load_refiner(const std::filesystem::path& path);

struct InferenceOptions {
  double cfg_weight = 3.0;
  std::uint64_t seed = 0;
  int batch_size = 8;
  bool record_trajectory = false;
  /// Clamp x̂0 to the label-embedding range each step (pixel-space codec only).
  bool clip_clean = true;
};

struct InferenceResult {
  std::vector<LabelMap> labels;
  std::vector<Trajectory> trajectories;  // filled when record_trajectory
};

/// DDIM sampling over the schedule's inference timesteps, finishing at the
/// clean estimate; image i starts from noise seeded by derive_seed(seed, i).
InferenceResult infer_refine(Refiner model, LabelCodec codec, const ImageCodec& image_codec,
                             const NoiseSchedule& schedule, const std::vector<Sample>& samples,
                             const std::vector<LabelMap>& rough, const InferenceOptions& options);

/// Softmax class maps of a trajectory latent, for stage_decompose.
SnapshotDecoder class_probability_decoder(LabelCodec codec, const ImageCodec& image_codec);

EvalOptions eval_options(const ExperimentConfig& config);

/// Evaluates `pred_dir/*.png` against `gt_dir/*.png`; ground-truth stems with
/// no prediction are listed in `missing` and excluded.
MetricsReport run_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                       const EvalOptions& options);

/// Writes report.json and report.txt into `dir`.
void write_report(const MetricsReport& report, const std::filesystem::path& dir, const std::string& stem = "report");

}  // namespace segdiff
