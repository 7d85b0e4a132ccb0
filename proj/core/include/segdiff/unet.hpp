#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace segdiff {

/// Per-level guidance injected at the decoder's skip connections; one entry per tap.
using GuidanceFeatures = std::vector<torch::Tensor>;

/// Encoder-mid-decoder denoiser topology. The encoder exposes one tap per
/// residual block plus one for the mid block; the decoder consumes the same
/// taps in reverse through long skip connections.
struct DenoiserConfig {
  int latent_channels = 3;
  int condition_channels = 0;  // concatenated to z_t at the input (plain generative wiring)
  int base_width = 32;
  std::vector<int> channel_mult = {1, 2, 2};
  int blocks_per_level = 2;
  int time_embed_width = 64;
  int groups = 8;

  int levels() const { return static_cast<int>(channel_mult.size()); }
  int tap_count() const { return levels() * blocks_per_level + 1; }
  int input_channels() const { return latent_channels + condition_channels; }
  int level_channels(int level) const { return base_width * channel_mult.at(level); }
  /// Channel count of each tap, encoder order, mid tap last.
  std::vector<int> tap_channels() const;
  /// Spatial downsampling of each tap relative to the input.
  std::vector<int> tap_strides() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

/// Sinusoidal features [cos(t w_i), sin(t w_i)], w_i = 10000^(-i / (width/2)).
/// `t` is an int64 or float [B] tensor; returns [B, width].
torch::Tensor timestep_embedding(const torch::Tensor& t, int width);

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_channels, int out_channels, int time_channels, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear time_proj_{nullptr};
  torch::nn::Conv2d shortcut_{nullptr};
};
TORCH_MODULE(ResBlock);

struct EncoderOutput {
  std::vector<torch::Tensor> taps;  // tap_count() entries; last is the mid block output
  torch::Tensor hidden;             // deepest encoder block output (before the mid block)
  torch::Tensor temb;
};

class UNetEncoderImpl : public torch::nn::Module {
 public:
  explicit UNetEncoderImpl(const DenoiserConfig& config);
  EncoderOutput forward(const torch::Tensor& x, const torch::Tensor& t);
  torch::Tensor time_features(const torch::Tensor& t);
  const DenoiserConfig& config() const { return config_; }

 private:
  DenoiserConfig config_;
  torch::nn::Linear time_in_{nullptr}, time_out_{nullptr};
  torch::nn::Conv2d input_conv_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::ModuleList downsamples_{nullptr};
  ResBlock mid1_{nullptr}, mid2_{nullptr};
};
TORCH_MODULE(UNetEncoder);

class UNetDecoderImpl : public torch::nn::Module {
 public:
  explicit UNetDecoderImpl(const DenoiserConfig& config);
  /// `guidance`, when given, is added element-wise to each tap before use.
  torch::Tensor forward(const std::vector<torch::Tensor>& taps, const GuidanceFeatures* guidance,
                        const torch::Tensor& temb);

 private:
  DenoiserConfig config_;
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::ModuleList upsamples_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(UNetDecoder);

struct DenoiserOutput {
  torch::Tensor eps;
  torch::Tensor hidden;
  std::vector<torch::Tensor> skips;
};

class DenoiserUNetImpl : public torch::nn::Module {
 public:
  explicit DenoiserUNetImpl(const DenoiserConfig& config);

  /// `condition` must be defined iff config.condition_channels > 0.
  DenoiserOutput forward(const torch::Tensor& z_t, const torch::Tensor& condition, const torch::Tensor& t,
                         const GuidanceFeatures* guidance = nullptr);
  /// Input assembled from z_t and the optional concatenated condition.
  torch::Tensor assemble_input(const torch::Tensor& z_t, const torch::Tensor& condition) const;

  const DenoiserConfig& config() const { return config_; }
  UNetEncoder encoder{nullptr};
  UNetDecoder decoder{nullptr};

 private:
  DenoiserConfig config_;
};
TORCH_MODULE(DenoiserUNet);

/// Checks a guidance list against encoder taps (count and per-entry shape).
void check_guidance(const std::vector<torch::Tensor>& taps, const GuidanceFeatures& guidance);

/// Timestep argument normalised to an int64 [B] tensor.
torch::Tensor timestep_batch(const torch::Tensor& t, std::int64_t batch);
torch::Tensor timestep_batch(int t, std::int64_t batch);

/// Copies parameter and buffer values from `src` to `dst` (same architecture).
void copy_weights(const torch::nn::Module& src, torch::nn::Module& dst);

std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace segdiff
