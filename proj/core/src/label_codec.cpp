#include "segdiff/label_codec.hpp"

#include <random>

#include "segdiff/checkpoint.hpp"
#include "segdiff/error.hpp"
#include "segdiff/log.hpp"
#include "segdiff/rng.hpp"
#include "segdiff/tensors.hpp"

namespace nn = torch::nn;

namespace segdiff {

LabelCodecImpl::LabelCodecImpl(int num_classes, int hidden_channels)
    : num_classes_(num_classes), hidden_channels_(hidden_channels) {
  if (num_classes < 1) throw ConfigError("label codec needs at least one class");
  if (hidden_channels < 1) throw ConfigError("label codec hidden width must be positive");
  table = register_module("table", nn::Embedding(num_classes, kEmbeddingChannels));
  expand = register_module("expand", nn::Conv2d(nn::Conv2dOptions(kEmbeddingChannels, hidden_channels, 1)));
  project = register_module("project", nn::Conv2d(nn::Conv2dOptions(hidden_channels, num_classes, 1)));
}

torch::Tensor LabelCodecImpl::embed(const torch::Tensor& labels) {
  if (labels.dim() != 3) throw ValidationError("embed expects [B,H,W] labels");
  if (labels.numel() > 0) {
    const auto lo = labels.min().item<std::int64_t>();
    const auto hi = labels.max().item<std::int64_t>();
    if (lo < 0 || hi >= num_classes_) {
      throw ValidationError("label value outside [0, " + std::to_string(num_classes_) + ")");
    }
  }
  auto raw = table->forward(labels.to(torch::kInt64));  // [B,H,W,3]
  return (2.0 * torch::sigmoid(raw) - 1.0).permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor LabelCodecImpl::decode(const torch::Tensor& embedded) {
  if (embedded.dim() != 4 || embedded.size(1) != kEmbeddingChannels) {
    throw ValidationError("decode expects [B,3,H,W] embeddings");
  }
  return project->forward(torch::relu(expand->forward(embedded)));
}

torch::Tensor LabelCodecImpl::decode_labels(const torch::Tensor& embedded) {
  return decode(embedded).argmax(1);
}

LabelCodec make_label_codec(int num_classes, std::uint64_t seed, int hidden_channels) {
  torch::manual_seed(seed);
  return LabelCodec(num_classes, hidden_channels);
}

torch::Tensor embed_labels(LabelCodec codec, const LabelMap& labels) {
  return codec->embed(to_tensor(labels).unsqueeze(0)).squeeze(0);
}

torch::Tensor decode_embedding(LabelCodec codec, const torch::Tensor& embedded) {
  if (embedded.dim() != 3) throw ValidationError("decode_embedding expects [3,H,W]");
  return codec->decode(embedded.unsqueeze(0)).squeeze(0);
}

CodecTrainResult train_codec(std::span<const LabelMap> labels, int num_classes, const CodecTrainOptions& options) {
  if (labels.empty()) throw ConfigError("train_codec needs a non-empty label set");
  if (options.steps < 0 || options.batch_size < 1) throw ConfigError("invalid codec training options");
  if (options.noise_variance < 0) throw ConfigError("noise variance must be >= 0");
  for (const auto& l : labels) check_label_range(l, num_classes, "codec training label");

  std::vector<bool> seen(num_classes, false);
  for (const auto& l : labels) {
    for (auto v : l.data) seen[v] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    log::warn("train_codec: corpus contains a single class; the decoder cannot be meaningfully trained");
  }

  CodecTrainResult result;
  result.codec = make_label_codec(num_classes, options.seed);
  const torch::Tensor all = stack_labels(labels);
  Rng rng(derive_seed(options.seed, 7));
  torch::optim::Adam optimizer(result.codec->parameters(), torch::optim::AdamOptions(options.learning_rate));
  const double noise_std = std::sqrt(options.noise_variance);
  std::uniform_int_distribution<std::int64_t> pick(0, all.size(0) - 1);
  result.loss_history.reserve(options.steps);
  for (int step = 0; step < options.steps; ++step) {
    std::vector<std::int64_t> idx(options.batch_size);
    for (auto& i : idx) i = pick(rng.engine());
    const torch::Tensor batch = all.index_select(0, torch::tensor(idx, torch::kInt64));
    torch::Tensor embedded = result.codec->embed(batch);
    if (noise_std > 0) embedded = embedded + noise_std * torch::randn(embedded.sizes(), rng.generator());
    const torch::Tensor loss = torch::nn::functional::cross_entropy(result.codec->decode(embedded), batch);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    result.loss_history.push_back(loss.item<double>());
  }
  return result;
}

double codec_round_trip_accuracy(LabelCodec codec, std::span<const LabelMap> labels, double noise_variance,
                                 std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  Rng rng(seed);
  std::int64_t correct = 0, total = 0;
  for (const auto& l : labels) {
    const torch::Tensor y = to_tensor(l).unsqueeze(0);
    torch::Tensor e = codec->embed(y);
    if (noise_variance > 0) e = e + std::sqrt(noise_variance) * torch::randn(e.sizes(), rng.generator());
    correct += codec->decode_labels(e).eq(y).sum().item<std::int64_t>();
    total += y.numel();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

void save_codec(LabelCodec codec, const std::filesystem::path& path) {
  CheckpointWriter writer("codec");
  writer.put_int("num_classes", codec->num_classes());
  writer.put_int("hidden_channels", codec->hidden_channels());
  writer.put_module("weights", *codec);
  writer.save(path);
}

LabelCodec load_codec(const std::filesystem::path& path) {
  CheckpointReader reader(path, "codec");
  LabelCodec codec(static_cast<int>(reader.get_int("num_classes")), static_cast<int>(reader.get_int("hidden_channels")));
  reader.load_module("weights", *codec);
  return codec;
}

}  // namespace segdiff
