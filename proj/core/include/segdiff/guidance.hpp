#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "segdiff/unet.hpp"

namespace segdiff {

struct GuidanceConfig {
  int attention_dim = 32;       // d, width of the query/key/value projections
  int heads = 1;
  int max_tokens = 1024;        // key/value grids above this are 2x average-pooled until they fit
  void validate() const;
};

void to_json(nlohmann::json& j, const GuidanceConfig& c);
void from_json(const nlohmann::json& j, GuidanceConfig& c);

/// Fuses noisy-sample features with condition features:
///   f' = ZConv([f_zt, f_c]),  f_g = f' + W_O Attention(f' W_Q, f_c W_K, f_c W_V).
/// ZConv and W_O start at zero, so a fresh module emits exactly zero.
class GuidanceModuleImpl : public torch::nn::Module {
 public:
  GuidanceModuleImpl(int sample_channels, int condition_channels, const GuidanceConfig& config);

  torch::Tensor forward(const torch::Tensor& f_zt, const torch::Tensor& f_c);
  /// Softmax attention weights [B, heads, N_query, N_key] for the same inputs.
  torch::Tensor attention_weights(const torch::Tensor& f_zt, const torch::Tensor& f_c);

  torch::nn::Conv2d zero_conv{nullptr};
  torch::nn::Linear w_q{nullptr}, w_k{nullptr}, w_v{nullptr}, w_o{nullptr};

 private:
  struct Projected {
    torch::Tensor fused;  // f' as [B,C,H,W]
    torch::Tensor q, k, v;  // [B, heads, N, d_head]
  };
  Projected project(const torch::Tensor& f_zt, const torch::Tensor& f_c);

  int sample_channels_;
  int condition_channels_;
  GuidanceConfig config_;
};
TORCH_MODULE(GuidanceModule);

/// Frozen encoder applied separately to c_I and c_r; per-level channel concat.
/// Conditions with fewer channels than the encoder input are zero-padded.
std::vector<torch::Tensor> encode_conditions(UNetEncoder& frozen, const torch::Tensor& c_image,
                                             const torch::Tensor& c_rough, const torch::Tensor& t);

/// One guidance module per tap; tap ℓ has channels C_ℓ, its condition features 2·C_ℓ.
torch::nn::ModuleList make_guidance_modules(const DenoiserConfig& denoiser, const GuidanceConfig& config);

GuidanceFeatures guide(torch::nn::ModuleList& modules, const std::vector<torch::Tensor>& sample_taps,
                       const std::vector<torch::Tensor>& condition_taps);

/// Disables gradients for every parameter of `module`.
void freeze(torch::nn::Module& module);

}  // namespace segdiff
