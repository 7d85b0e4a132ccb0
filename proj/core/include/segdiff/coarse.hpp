#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "segdiff/raster.hpp"
#include "segdiff/synth.hpp"

namespace segdiff {

struct CoarseConfig {
  int num_classes = 3;
  int in_channels = 3;
  std::vector<int> widths = {32, 64, 128, 256};
  int groups = 8;
  void validate() const;
};

void to_json(nlohmann::json& j, const CoarseConfig& c);
void from_json(const nlohmann::json& j, CoarseConfig& c);

/// Encoder-decoder CNN with skip connections; one max-pool per level after the first.
class CoarseNetImpl : public torch::nn::Module {
 public:
  explicit CoarseNetImpl(const CoarseConfig& config);

  /// [B,3,H,W] → [B,K,H,W] logits. Inputs not divisible by the total stride
  /// are edge-padded and the output cropped back.
  torch::Tensor forward(const torch::Tensor& x);
  /// Penultimate decoder features [B, widths[0], H, W].
  torch::Tensor features(const torch::Tensor& x);

  const CoarseConfig& config() const { return config_; }

 private:
  torch::Tensor decode(const torch::Tensor& x);

  CoarseConfig config_;
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::ModuleList reduce_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(CoarseNet);

struct CoarseTrainOptions {
  int steps = 5000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  bool flip = true;
  int log_every = 100;
  int validate_every = 500;
  std::uint64_t seed = 0;
};

struct CoarseTrainResult {
  CoarseNet model{nullptr};
  std::vector<double> loss_history;                  // one entry per step
  std::vector<std::pair<int, double>> val_loss;      // (step, loss)
  std::vector<std::pair<int, double>> val_miou;      // (step, mIoU)
};

CoarseTrainResult train_coarse(std::span<const Sample> train, std::span<const Sample> val, const CoarseConfig& config,
                               const CoarseTrainOptions& options);

LabelMap predict_coarse(CoarseNet model, const Image& image);
std::vector<LabelMap> predict_coarse(CoarseNet model, std::span<const Sample> samples, int batch_size = 8);

/// Corpus mIoU of the model's predictions.
double coarse_miou(CoarseNet model, std::span<const Sample> samples);

void save_coarse(CoarseNet model, const std::filesystem::path& path);
CoarseNet load_coarse(const std::filesystem::path& path);

}  // namespace segdiff
