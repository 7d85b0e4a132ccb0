#pragma once

#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "segdiff/align.hpp"
#include "segdiff/guidance.hpp"
#include "segdiff/unet.hpp"

namespace segdiff {

struct ConditionSet {
  bool image = true;
  bool rough = true;
  bool any() const { return image || rough; }
};

struct RefinerConfig {
  DenoiserConfig denoiser;   // condition_channels is derived, see resolve()
  GuidanceConfig guidance;
  AlignConfig align;
  bool use_guidance = true;  // false: plain conditional diffusion, conditions concatenated at the input
  bool concat_image = false; // guidance mode only: also concatenate c_I at the input
  ConditionSet conditions;
  int align_target_dim = 32;

  /// Copy with denoiser.condition_channels set from the wiring flags.
  RefinerConfig resolve() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ConditionSet& c);
void from_json(const nlohmann::json& j, ConditionSet& c);
void to_json(nlohmann::json& j, const RefinerConfig& c);
void from_json(const nlohmann::json& j, RefinerConfig& c);

struct RefinerOutput {
  torch::Tensor eps;
  torch::Tensor hidden;       // deepest encoder features, the alignment tap
  GuidanceFeatures guidance;  // empty without the guidance network
};

class RefinerImpl : public torch::nn::Module {
 public:
  explicit RefinerImpl(const RefinerConfig& config);

  /// Disabled conditions are replaced by zeros; c_I and c_r share one latent shape.
  RefinerOutput forward(const torch::Tensor& z_t, const torch::Tensor& c_image, const torch::Tensor& c_rough,
                        const torch::Tensor& t);
  /// Classifier-free guidance: conditional and zero-condition branches in one batch.
  torch::Tensor guided_eps(const torch::Tensor& z_t, const torch::Tensor& c_image, const torch::Tensor& c_rough,
                           const torch::Tensor& t, double weight);

  /// Initialises the trainable denoiser from a warm-up network and re-clones
  /// the frozen encoder from it. Input-conv channels absent from the warm-up
  /// network start at zero.
  void init_from(DenoiserUNet warm);
  /// Parameters the optimiser should own (frozen encoder excluded).
  std::vector<torch::Tensor> trainable_parameters();

  const RefinerConfig& config() const { return config_; }

  DenoiserUNet denoiser{nullptr};
  UNetEncoder frozen_encoder{nullptr};
  torch::nn::ModuleList guidance_modules{nullptr};
  Projector projector{nullptr};

 private:
  std::pair<torch::Tensor, torch::Tensor> apply_condition_set(const torch::Tensor& c_image,
                                                              const torch::Tensor& c_rough) const;
  RefinerConfig config_;
};
TORCH_MODULE(Refiner);

/// Copies parameters by name; a mismatched `input_conv.weight` is copied into
/// its leading input channels and the remainder zeroed. Other mismatches throw.
void warm_start(const torch::nn::Module& src, torch::nn::Module& dst);

}  // namespace segdiff
