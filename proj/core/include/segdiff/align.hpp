#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "segdiff/coarse.hpp"

namespace segdiff {

struct AlignConfig {
  bool enabled = true;
  double lambda0 = 0.5;
  int stop_step = 200;
  int grid = 8;              // patches per side, N = grid²
  int projector_width = 128;
  void validate() const;
};

void to_json(nlohmann::json& j, const AlignConfig& c);
void from_json(const nlohmann::json& j, AlignConfig& c);

/// Average-pools a hidden map to the patch grid, then a three-layer MLP per patch.
class ProjectorImpl : public torch::nn::Module {
 public:
  ProjectorImpl(int hidden_channels, int target_dim, int grid, int width);
  /// [B,C,h,w] → [B, grid², target_dim]
  torch::Tensor forward(const torch::Tensor& hidden);
  int grid() const { return grid_; }
  int target_dim() const { return target_dim_; }

 private:
  int grid_;
  int target_dim_;
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(Projector);

struct RepaLoss {
  torch::Tensor loss;         // scalar, −mean cosine over usable patches
  std::int64_t skipped = 0;   // patches with a (near) zero-norm vector
};

inline constexpr double kRepaNormEpsilon = 1e-8;

/// Negative mean patch-wise cosine similarity of [.., N, D] tensors.
RepaLoss repa_loss(const torch::Tensor& projected, const torch::Tensor& targets);

/// mse + λ·repa while step < stop_step; afterwards mse itself.
torch::Tensor total_loss(const torch::Tensor& mse, const torch::Tensor& repa, std::int64_t step, double lambda0,
                         std::int64_t stop_step);

/// Supplies per-image patch features y_c of shape [B, N, D].
class AlignTargetProvider {
 public:
  virtual ~AlignTargetProvider() = default;
  virtual torch::Tensor targets(const std::vector<std::string>& ids, const torch::Tensor& images) = 0;
  virtual int dim() const = 0;
  virtual int grid() const = 0;
};

/// Penultimate coarse-segmenter features average-pooled to the grid; cached by id.
class CoarseFeatureTargets : public AlignTargetProvider {
 public:
  CoarseFeatureTargets(CoarseNet model, int grid);
  torch::Tensor targets(const std::vector<std::string>& ids, const torch::Tensor& images) override;
  int dim() const override;
  int grid() const override { return grid_; }

 private:
  CoarseNet model_;
  int grid_;
  std::map<std::string, torch::Tensor> cache_;
};

/// Reads features written by write_precomputed_targets: a manifest.json with
/// {"dim", "grid", "entries": {id: file}} and raw little-endian float32 files.
class PrecomputedTargets : public AlignTargetProvider {
 public:
  explicit PrecomputedTargets(const std::filesystem::path& dir);
  torch::Tensor targets(const std::vector<std::string>& ids, const torch::Tensor& images) override;
  int dim() const override { return dim_; }
  int grid() const override { return grid_; }

 private:
  std::filesystem::path dir_;
  int dim_ = 0;
  int grid_ = 0;
  std::map<std::string, std::string> files_;
  std::map<std::string, torch::Tensor> cache_;
};

void write_precomputed_targets(const std::filesystem::path& dir, const std::map<std::string, torch::Tensor>& features,
                               int grid);

/// Raw little-endian float32 array IO shared by target and trajectory files.
void write_f32(const std::filesystem::path& path, const torch::Tensor& values);
torch::Tensor read_f32(const std::filesystem::path& path, std::vector<std::int64_t> shape);

}  // namespace segdiff
