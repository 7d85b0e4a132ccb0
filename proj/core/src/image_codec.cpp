#include "segdiff/image_codec.hpp"

#include <random>

#include "segdiff/error.hpp"
#include "segdiff/rng.hpp"

namespace nn = torch::nn;

namespace segdiff {

TinyAutoencoderImpl::TinyAutoencoderImpl(int in_channels, int latent_channels, int width)
    : in_channels_(in_channels), latent_channels_(latent_channels) {
  encoder_ = register_module(
      "encoder", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, width, 3).stride(2).padding(1)), nn::SiLU(),
                                nn::Conv2d(nn::Conv2dOptions(width, width, 3).stride(2).padding(1)), nn::SiLU(),
                                nn::Conv2d(nn::Conv2dOptions(width, latent_channels, 1))));
  decoder_ = register_module(
      "decoder",
      nn::Sequential(nn::Conv2d(nn::Conv2dOptions(latent_channels, width, 3).padding(1)), nn::SiLU(),
                     nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kNearest)),
                     nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)), nn::SiLU(),
                     nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kNearest)),
                     nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)), nn::SiLU(),
                     nn::Conv2d(nn::Conv2dOptions(width, in_channels, 3).padding(1))));
}

torch::Tensor TinyAutoencoderImpl::encode(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != in_channels_) throw ValidationError("autoencoder input channel mismatch");
  if (x.size(2) % 4 != 0 || x.size(3) % 4 != 0) throw ValidationError("autoencoder needs H, W divisible by 4");
  return encoder_->forward(x);
}

torch::Tensor TinyAutoencoderImpl::decode(const torch::Tensor& z) {
  if (z.dim() != 4 || z.size(1) != latent_channels_) throw ValidationError("autoencoder latent channel mismatch");
  return decoder_->forward(z);
}

TinyAutoencoderCodec::TinyAutoencoderCodec(TinyAutoencoder model, double tolerance)
    : model_(std::move(model)), tolerance_(tolerance) {
  for (auto& p : model_->parameters()) p.set_requires_grad(false);
}

torch::Tensor TinyAutoencoderCodec::encode(const torch::Tensor& x) const { return model_->encode(x); }
torch::Tensor TinyAutoencoderCodec::decode(const torch::Tensor& z) const { return model_->decode(z); }

std::unique_ptr<TinyAutoencoderCodec> train_tiny_autoencoder(const torch::Tensor& data,
                                                              const AutoencoderTrainOptions& options,
                                                              int latent_channels) {
  if (data.dim() != 4 || data.size(0) == 0) throw ConfigError("autoencoder training data must be [N,C,H,W], N > 0");
  torch::manual_seed(options.seed);
  TinyAutoencoder model(static_cast<int>(data.size(1)), latent_channels);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(options.learning_rate));
  std::mt19937_64 rng(derive_seed(options.seed, 3));
  std::uniform_int_distribution<std::int64_t> pick(0, data.size(0) - 1);
  for (int step = 0; step < options.steps; ++step) {
    std::vector<std::int64_t> idx(options.batch_size);
    for (auto& i : idx) i = pick(rng);
    const auto batch = data.index_select(0, torch::tensor(idx, torch::kInt64));
    const auto loss = (model->forward(batch) - batch).pow(2).mean();
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
  }
  torch::NoGradGuard no_grad;
  const double err = (model->forward(data) - data).abs().max().item<double>();
  return std::make_unique<TinyAutoencoderCodec>(model, err);
}

}  // namespace segdiff
