#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <torch/torch.h>

namespace segdiff {

/// Maps images / embedded labels to the space the denoiser works in and back.
class ImageCodec {
 public:
  virtual ~ImageCodec() = default;

  /// [B, C, H, W] -> [B, C', H / f, W / f]
  virtual torch::Tensor encode(const torch::Tensor& x) const = 0;
  virtual torch::Tensor decode(const torch::Tensor& z) const = 0;
  virtual int downsample_factor() const = 0;
  virtual int latent_channels() const = 0;
  /// Max-abs reconstruction error the codec guarantees (0 for exact codecs).
  virtual double reconstruction_tolerance() const = 0;
  virtual std::string name() const = 0;
};

/// Pixel-space diffusion: encode and decode are the identity.
class IdentityCodec final : public ImageCodec {
 public:
  explicit IdentityCodec(int channels = 3) : channels_(channels) {}
  torch::Tensor encode(const torch::Tensor& x) const override { return x; }
  torch::Tensor decode(const torch::Tensor& z) const override { return z; }
  int downsample_factor() const override { return 1; }
  int latent_channels() const override { return channels_; }
  double reconstruction_tolerance() const override { return 0.0; }
  std::string name() const override { return "identity"; }

 private:
  int channels_;
};

/// Two stride-2 convolutions down, nearest-neighbour + convolution up (4x).
class TinyAutoencoderImpl : public torch::nn::Module {
 public:
  TinyAutoencoderImpl(int in_channels = 3, int latent_channels = 4, int width = 32);
  torch::Tensor encode(const torch::Tensor& x);
  torch::Tensor decode(const torch::Tensor& z);
  torch::Tensor forward(const torch::Tensor& x) { return decode(encode(x)); }

  int in_channels() const { return in_channels_; }
  int latent_channels() const { return latent_channels_; }

 private:
  int in_channels_;
  int latent_channels_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(TinyAutoencoder);

class TinyAutoencoderCodec final : public ImageCodec {
 public:
  TinyAutoencoderCodec(TinyAutoencoder model, double tolerance);
  torch::Tensor encode(const torch::Tensor& x) const override;
  torch::Tensor decode(const torch::Tensor& z) const override;
  int downsample_factor() const override { return 4; }
  int latent_channels() const override { return model_->latent_channels(); }
  double reconstruction_tolerance() const override { return tolerance_; }
  std::string name() const override { return "tiny-autoencoder"; }
  const TinyAutoencoder& model() const { return model_; }

 private:
  mutable TinyAutoencoder model_;
  double tolerance_;
};

struct AutoencoderTrainOptions {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Fits the autoencoder with an L2 reconstruction loss on `data` ([N, C, H, W]);
/// the returned codec's tolerance is the measured max-abs error on `data`.
std::unique_ptr<TinyAutoencoderCodec> train_tiny_autoencoder(const torch::Tensor& data,
                                                              const AutoencoderTrainOptions& options,
                                                              int latent_channels = 4);

}  // namespace segdiff
