#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/coarse.hpp"
#include "segdiff/image_codec.hpp"
#include "segdiff/label_codec.hpp"
#include "segdiff/refiner.hpp"
#include "segdiff/schedule.hpp"
#include "segdiff/synth.hpp"

namespace segdiff {

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "SEGDIFF_OUTPUT_ROOT";

enum class CodecMode { identity, tiny_autoencoder };

struct DataConfig {
  std::string root;  // dataset directory; empty: synthesise in memory
  SceneSpec scene;
  int train_count = 200;
  int val_count = 16;
  int test_count = 50;
  DegradeParams degrade{3, 0.1, 0.0, 0, 0};
  /// Where training/inference rough maps come from: "degrade" (degrade_label
  /// of the ground truth), "coarse" (coarse model predictions) or "files"
  /// (`root/<split>/rough/*.png`).
  std::string rough = "degrade";
  /// With "degrade", draw a fresh degradation for every training example.
  bool resample_degradation = true;
};

struct StageConfig {
  int steps = 0;
  int batch_size = 4;
  double learning_rate = 1e-3;
  int log_every = 100;
  int validate_every = 0;     // 0: never
  int checkpoint_every = 0;   // 0: only at the end
};

struct ExperimentConfig {
  std::string name = "default";
  std::uint64_t seed = 0;
  int num_classes = 3;
  std::string output_dir;  // empty: $SEGDIFF_OUTPUT_ROOT (or ./runs) / name

  DataConfig data;
  ScheduleParams schedule;
  CodecMode codec_mode = CodecMode::identity;
  CodecTrainOptions codec;
  AutoencoderTrainOptions autoencoder;
  CoarseConfig coarse;
  CoarseTrainOptions coarse_train;

  RefinerConfig refiner;
  bool cubic = true;
  double cfg_weight = 3.0;
  /// Clamp the clean estimate to the label-embedding range while sampling.
  bool clip_clean = true;
  double condition_dropout = 0.1;
  /// "coarse" (coarse-model features) or a directory of precomputed targets.
  std::string align_targets = "coarse";
  StageConfig warmup{2000, 8, 1e-3, 200, 0, 0};
  StageConfig train{20000, 4, 2e-4, 100, 1000, 1000};
  int val_subset = 16;

  std::vector<int> wfm_tolerances = {1, 3, 5};
  std::optional<int> ignore_class;

  void validate() const;
  /// Output directory after applying the env-var default.
  std::filesystem::path output_path() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

void to_json(nlohmann::json& j, const SceneSpec& c);
void from_json(const nlohmann::json& j, SceneSpec& c);
void to_json(nlohmann::json& j, const DegradeParams& c);
void from_json(const nlohmann::json& j, DegradeParams& c);
void to_json(nlohmann::json& j, const ScheduleParams& c);
void from_json(const nlohmann::json& j, ScheduleParams& c);

/// Parses a JSON config file; unknown top-level keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Ablation presets: "A" image only (plain conditional diffusion), "B" image + rough through the guidance network,
/// "C" image + rough + cubic timestep sampling.
ExperimentConfig apply_ablation(ExperimentConfig config, const std::string& preset);

/// Child seeds for the independent random streams of a run.
enum class SeedStream : std::uint64_t { data = 1, codec, coarse, warmup, refiner, inference, degrade, autoencoder };
std::uint64_t stream_seed(const ExperimentConfig& config, SeedStream stream);

}  // namespace segdiff
