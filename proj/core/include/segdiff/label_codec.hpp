#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "segdiff/raster.hpp"

namespace segdiff {

inline constexpr int kEmbeddingChannels = 3;

/// Label embedding network: a K x 3 table squashed by 2*sigmoid(.)-1 on the
/// encoder side, two pointwise convolutions (3 -> hidden -> K) on the decoder side.
class LabelCodecImpl : public torch::nn::Module {
 public:
  explicit LabelCodecImpl(int num_classes, int hidden_channels = 128);

  /// [B, H, W] int64 labels -> [B, 3, H, W] values in (-1, 1).
  torch::Tensor embed(const torch::Tensor& labels);
  /// [B, 3, H, W] -> [B, K, H, W] class logits.
  torch::Tensor decode(const torch::Tensor& embedded);
  /// argmax over decode(); [B, H, W] int64.
  torch::Tensor decode_labels(const torch::Tensor& embedded);

  int num_classes() const { return num_classes_; }
  int hidden_channels() const { return hidden_channels_; }

  torch::nn::Embedding table{nullptr};
  torch::nn::Conv2d expand{nullptr};
  torch::nn::Conv2d project{nullptr};

 private:
  int num_classes_;
  int hidden_channels_;
};
TORCH_MODULE(LabelCodec);

LabelCodec make_label_codec(int num_classes, std::uint64_t seed, int hidden_channels = 128);

/// Embed a single label map: [3, H, W].
torch::Tensor embed_labels(LabelCodec codec, const LabelMap& labels);
/// Decode a single [3, H, W] embedding to [K, H, W] logits.
torch::Tensor decode_embedding(LabelCodec codec, const torch::Tensor& embedded);

struct CodecTrainOptions {
  int steps = 2000;
  double learning_rate = 1e-3;
  double noise_variance = 0.25;
  int batch_size = 4;
  std::uint64_t seed = 0;
};

struct CodecTrainResult {
  LabelCodec codec{nullptr};
  std::vector<double> loss_history;
};

/// Cross-entropy training of decode(embed(y) + noise) against y. Uses labels only.
CodecTrainResult train_codec(std::span<const LabelMap> labels, int num_classes, const CodecTrainOptions& options);

/// Fraction of pixels with argmax(decode(embed(y) + noise)) == y.
double codec_round_trip_accuracy(LabelCodec codec, std::span<const LabelMap> labels,
                                 double noise_variance = 0.0, std::uint64_t seed = 0);

void save_codec(LabelCodec codec, const std::filesystem::path& path);
LabelCodec load_codec(const std::filesystem::path& path);

}  // namespace segdiff
