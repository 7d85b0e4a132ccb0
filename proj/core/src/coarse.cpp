#include "segdiff/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "segdiff/checkpoint.hpp"
#include "segdiff/error.hpp"
#include "segdiff/log.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/tensors.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace segdiff {

void CoarseConfig::validate() const {
  if (num_classes < 2) throw ConfigError("coarse model needs at least 2 classes");
  if (in_channels < 1) throw ConfigError("coarse in_channels must be positive");
  if (widths.size() < 2) throw ConfigError("coarse model needs at least 2 levels");
  for (int w : widths) {
    if (w < 1 || w % groups != 0) throw ConfigError("coarse widths must be positive multiples of groups");
  }
}

void to_json(nlohmann::json& j, const CoarseConfig& c) {
  j = {{"num_classes", c.num_classes}, {"in_channels", c.in_channels}, {"widths", c.widths}, {"groups", c.groups}};
}

void from_json(const nlohmann::json& j, CoarseConfig& c) {
  CoarseConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.widths = j.value("widths", d.widths);
  c.groups = j.value("groups", d.groups);
}

namespace {

nn::Sequential double_conv(int in, int out, int groups) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)), nn::GroupNorm(groups, out),
                        nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)),
                        nn::GroupNorm(groups, out), nn::ReLU());
}

}  // namespace

CoarseNetImpl::CoarseNetImpl(const CoarseConfig& config) : config_(config) {
  config_.validate();
  const auto& w = config_.widths;
  down_ = register_module("down", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  reduce_ = register_module("reduce", nn::ModuleList());
  int prev = config_.in_channels;
  for (int width : w) {
    down_->push_back(double_conv(prev, width, config_.groups));
    prev = width;
  }
  for (int l = static_cast<int>(w.size()) - 2; l >= 0; --l) {
    reduce_->push_back(nn::Conv2d(nn::Conv2dOptions(w[l + 1], w[l], 1)));
    up_->push_back(double_conv(2 * w[l], w[l], config_.groups));
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(w[0], config_.num_classes, 1)));
}

torch::Tensor CoarseNetImpl::decode(const torch::Tensor& input) {
  if (input.dim() != 4 || input.size(1) != config_.in_channels) {
    throw ValidationError("coarse model expects [B," + std::to_string(config_.in_channels) + ",H,W] images");
  }
  const std::int64_t stride = std::int64_t{1} << (config_.widths.size() - 1);
  const auto h = input.size(2), w = input.size(3);
  const auto ph = (stride - h % stride) % stride, pw = (stride - w % stride) % stride;
  auto x = (ph || pw) ? F::pad(input, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate)) : input;

  std::vector<torch::Tensor> skips;
  for (std::size_t l = 0; l < down_->size(); ++l) {
    if (l > 0) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
    x = down_[l]->as<nn::Sequential>()->forward(x);
    skips.push_back(x);
  }
  for (std::size_t i = 0; i < up_->size(); ++i) {
    const auto& skip = skips[skips.size() - 2 - i];
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kNearest));
    x = reduce_[i]->as<nn::Conv2d>()->forward(x);
    x = up_[i]->as<nn::Sequential>()->forward(torch::cat({x, skip}, 1));
  }
  return x.index({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(0, h),
                  torch::indexing::Slice(0, w)});
}

torch::Tensor CoarseNetImpl::features(const torch::Tensor& x) { return decode(x); }

torch::Tensor CoarseNetImpl::forward(const torch::Tensor& x) { return head_->forward(decode(x)); }

namespace {

torch::Tensor batch_images(std::span<const Sample> samples, const std::vector<std::size_t>& idx,
                           std::vector<bool>* flips) {
  std::vector<torch::Tensor> imgs;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto t = to_tensor(samples[idx[k]].image);
    if (flips && (*flips)[k]) t = t.flip({2});
    imgs.push_back(t);
  }
  return torch::stack(imgs);
}

torch::Tensor batch_labels(std::span<const Sample> samples, const std::vector<std::size_t>& idx,
                           std::vector<bool>* flips) {
  std::vector<torch::Tensor> labels;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto t = to_tensor(samples[idx[k]].label);
    if (flips && (*flips)[k]) t = t.flip({1});
    labels.push_back(t);
  }
  return torch::stack(labels);
}

double validation_loss(CoarseNet& model, std::span<const Sample> val, int batch) {
  torch::NoGradGuard no_grad;
  double total = 0.0;
  std::int64_t n = 0;
  for (std::size_t s = 0; s < val.size(); s += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = s; i < std::min(val.size(), s + batch); ++i) idx.push_back(i);
    auto logits = model->forward(batch_images(val, idx, nullptr));
    total += F::cross_entropy(logits, batch_labels(val, idx, nullptr),
                              F::CrossEntropyFuncOptions().reduction(torch::kSum))
                 .item<double>();
    n += logits.size(0) * logits.size(2) * logits.size(3);
  }
  return total / static_cast<double>(n);
}

}  // namespace

CoarseTrainResult train_coarse(std::span<const Sample> train, std::span<const Sample> val, const CoarseConfig& config,
                               const CoarseTrainOptions& options) {
  if (train.empty()) throw ConfigError("coarse training set is empty");
  if (val.empty()) throw ConfigError("coarse validation set is empty");
  if (options.steps < 0 || options.batch_size < 1) throw ConfigError("invalid coarse training options");
  std::vector<std::int64_t> class_pixels(config.num_classes, 0);
  for (const auto& s : train) {
    check_label_range(s.label, config.num_classes, s.id.c_str());
    for (auto v : s.label.data) ++class_pixels[v];
  }
  for (int c = 0; c < config.num_classes; ++c) {
    if (class_pixels[c] == 0) log::warn("class ", c, " never occurs in the coarse training set");
  }

  torch::manual_seed(options.seed);
  CoarseTrainResult result;
  result.model = CoarseNet(config);
  auto& model = result.model;
  model->train();
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(options.learning_rate));
  std::mt19937_64 rng(options.seed ^ 0xC0A45Eull);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  for (int step = 0; step < options.steps; ++step) {
    std::vector<std::size_t> idx;
    std::vector<bool> flips;
    while (static_cast<int>(idx.size()) < options.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
      flips.push_back(options.flip && (rng() & 1u));
    }
    auto logits = model->forward(batch_images(train, idx, &flips));
    auto loss = F::cross_entropy(logits, batch_labels(train, idx, &flips));
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw TrainingError("coarse training loss became non-finite at step " +
                                                   std::to_string(step), "");
    result.loss_history.push_back(value);

    const int done = step + 1;
    if (options.validate_every > 0 && (done % options.validate_every == 0 || done == options.steps)) {
      const double vl = validation_loss(model, val, options.batch_size);
      const double miou = coarse_miou(model, val);
      result.val_loss.emplace_back(done, vl);
      result.val_miou.emplace_back(done, miou);
      log::info("coarse step ", done, " val loss ", vl, " val mIoU ", miou);
    } else if (options.log_every > 0 && done % options.log_every == 0) {
      log::info("coarse step ", done, " loss ", value);
    }
  }
  return result;
}

std::vector<LabelMap> predict_coarse(CoarseNet model, std::span<const Sample> samples, int batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<LabelMap> out;
  for (std::size_t s = 0; s < samples.size(); s += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = s; i < std::min(samples.size(), s + batch_size); ++i) idx.push_back(i);
    auto labels = labels_from_batch(model->forward(batch_images(samples, idx, nullptr)).argmax(1));
    for (auto& l : labels) out.push_back(std::move(l));
  }
  return out;
}

LabelMap predict_coarse(CoarseNet model, const Image& image) {
  torch::NoGradGuard no_grad;
  return labels_from_tensor(model->forward(to_tensor(image).unsqueeze(0)).argmax(1)[0]);
}

double coarse_miou(CoarseNet model, std::span<const Sample> samples) {
  const auto preds = predict_coarse(model, samples);
  const int k = model->config().num_classes;
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < samples.size(); ++i) cm += confusion(preds[i], samples[i].label, k);
  return classical_metrics(cm).miou;
}

void save_coarse(CoarseNet model, const std::filesystem::path& path) {
  CheckpointWriter writer("coarse");
  writer.put_json("config", model->config());
  writer.put_module("model", *model);
  writer.save(path);
}

CoarseNet load_coarse(const std::filesystem::path& path) {
  CheckpointReader reader(path, "coarse");
  auto config = reader.get_json("config").get<CoarseConfig>();
  CoarseNet model(config);
  reader.load_module("model", *model);
  return model;
}

}  // namespace segdiff
