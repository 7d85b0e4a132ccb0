#include "segdiff/unet.hpp"

#include <cmath>
#include <sstream>

#include "segdiff/error.hpp"

namespace nn = torch::nn;

namespace segdiff {

std::vector<int> DenoiserConfig::tap_channels() const {
  std::vector<int> out;
  for (int l = 0; l < levels(); ++l) {
    for (int b = 0; b < blocks_per_level; ++b) out.push_back(level_channels(l));
  }
  out.push_back(level_channels(levels() - 1));
  return out;
}

std::vector<int> DenoiserConfig::tap_strides() const {
  std::vector<int> out;
  for (int l = 0; l < levels(); ++l) {
    for (int b = 0; b < blocks_per_level; ++b) out.push_back(1 << l);
  }
  out.push_back(1 << (levels() - 1));
  return out;
}

void DenoiserConfig::validate() const {
  if (latent_channels < 1) throw ConfigError("denoiser latent_channels must be positive");
  if (condition_channels < 0) throw ConfigError("denoiser condition_channels must be >= 0");
  if (levels() < 2) throw ConfigError("denoiser needs at least 2 encoder levels");
  if (blocks_per_level < 1) throw ConfigError("denoiser needs at least one block per level");
  if (time_embed_width < 2 || time_embed_width % 2 != 0) throw ConfigError("time_embed_width must be even");
  if (base_width < 1 || groups < 1) throw ConfigError("invalid denoiser width/groups");
  for (int l = 0; l < levels(); ++l) {
    if (channel_mult[l] < 1) throw ConfigError("channel multipliers must be positive");
    if (level_channels(l) % groups != 0) throw ConfigError("group count must divide every level width");
  }
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"latent_channels", c.latent_channels}, {"condition_channels", c.condition_channels},
       {"base_width", c.base_width},           {"channel_mult", c.channel_mult},
       {"blocks_per_level", c.blocks_per_level}, {"time_embed_width", c.time_embed_width},
       {"groups", c.groups}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  DenoiserConfig d;
  c.latent_channels = j.value("latent_channels", d.latent_channels);
  c.condition_channels = j.value("condition_channels", d.condition_channels);
  c.base_width = j.value("base_width", d.base_width);
  c.channel_mult = j.value("channel_mult", d.channel_mult);
  c.blocks_per_level = j.value("blocks_per_level", d.blocks_per_level);
  c.time_embed_width = j.value("time_embed_width", d.time_embed_width);
  c.groups = j.value("groups", d.groups);
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int width) {
  if (width < 2 || width % 2 != 0) throw ValidationError("timestep embedding width must be even");
  const int half = width / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat64) / half);
  auto args = t.to(torch::kFloat64).reshape({-1, 1}) * freqs.reshape({1, -1});
  return torch::cat({torch::cos(args), torch::sin(args)}, 1).to(torch::kFloat32);
}

torch::Tensor timestep_batch(const torch::Tensor& t, std::int64_t batch) {
  auto out = t.to(torch::kInt64).reshape({-1});
  if (out.size(0) == 1 && batch > 1) out = out.expand({batch}).contiguous();
  if (out.size(0) != batch) throw ValidationError("timestep count does not match batch size");
  return out;
}

torch::Tensor timestep_batch(int t, std::int64_t batch) {
  return torch::full({batch}, static_cast<std::int64_t>(t), torch::kInt64);
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int time_channels, int groups) {
  auto norm_groups = [groups](int channels) {
    int g = std::min(groups, channels);
    while (channels % g != 0) --g;
    return g;
  };
  norm1_ = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(norm_groups(in_channels), in_channels)));
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  time_proj_ = register_module("time_proj", nn::Linear(time_channels, out_channels));
  norm2_ = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(norm_groups(out_channels), out_channels)));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  if (in_channels != out_channels) {
    shortcut_ = register_module("shortcut", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_->forward(torch::silu(norm1_->forward(x)));
  h = h + time_proj_->forward(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_->forward(torch::silu(norm2_->forward(h)));
  return (shortcut_ ? shortcut_->forward(x) : x) + h;
}

UNetEncoderImpl::UNetEncoderImpl(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  const int tw = config_.time_embed_width;
  time_in_ = register_module("time_in", nn::Linear(tw, tw));
  time_out_ = register_module("time_out", nn::Linear(tw, tw));
  input_conv_ = register_module(
      "input_conv", nn::Conv2d(nn::Conv2dOptions(config_.input_channels(), config_.level_channels(0), 3).padding(1)));
  blocks_ = register_module("blocks", nn::ModuleList());
  downsamples_ = register_module("downsamples", nn::ModuleList());
  int ch = config_.level_channels(0);
  for (int l = 0; l < config_.levels(); ++l) {
    const int out = config_.level_channels(l);
    for (int b = 0; b < config_.blocks_per_level; ++b) {
      blocks_->push_back(ResBlock(ch, out, tw, config_.groups));
      ch = out;
    }
    if (l + 1 < config_.levels()) {
      downsamples_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
    }
  }
  mid1_ = register_module("mid1", ResBlock(ch, ch, tw, config_.groups));
  mid2_ = register_module("mid2", ResBlock(ch, ch, tw, config_.groups));
}

torch::Tensor UNetEncoderImpl::time_features(const torch::Tensor& t) {
  // Follow the module precision so double-precision copies work end to end.
  auto e = timestep_embedding(t, config_.time_embed_width).to(time_in_->weight.scalar_type());
  return time_out_->forward(torch::silu(time_in_->forward(e)));
}

EncoderOutput UNetEncoderImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
  if (x.dim() != 4 || x.size(1) != config_.input_channels()) {
    std::ostringstream os;
    os << "encoder expects [B," << config_.input_channels() << ",H,W] input, got " << x.sizes();
    throw ValidationError(os.str());
  }
  const std::int64_t factor = std::int64_t{1} << (config_.levels() - 1);
  if (x.size(2) % factor != 0 || x.size(3) % factor != 0) {
    throw ValidationError("input height/width must be divisible by " + std::to_string(factor));
  }
  EncoderOutput out;
  out.temb = time_features(timestep_batch(t, x.size(0)));
  auto h = input_conv_->forward(x);
  std::size_t block = 0;
  for (int l = 0; l < config_.levels(); ++l) {
    for (int b = 0; b < config_.blocks_per_level; ++b) {
      h = blocks_[block++]->as<ResBlock>()->forward(h, out.temb);
      out.taps.push_back(h);
    }
    if (l + 1 < config_.levels()) h = downsamples_[l]->as<nn::Conv2d>()->forward(h);
  }
  out.hidden = out.taps.back();
  h = mid2_->forward(mid1_->forward(h, out.temb), out.temb);
  out.taps.push_back(h);
  return out;
}

UNetDecoderImpl::UNetDecoderImpl(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  const int tw = config_.time_embed_width;
  blocks_ = register_module("blocks", nn::ModuleList());
  upsamples_ = register_module("upsamples", nn::ModuleList());
  int ch = config_.level_channels(config_.levels() - 1);
  for (int l = config_.levels() - 1; l >= 0; --l) {
    const int skip = config_.level_channels(l);
    for (int b = 0; b < config_.blocks_per_level; ++b) {
      blocks_->push_back(ResBlock(ch + skip, skip, tw, config_.groups));
      ch = skip;
    }
    if (l > 0) upsamples_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1)));
  }
  out_norm_ = register_module("out_norm", nn::GroupNorm(nn::GroupNormOptions(std::min(config_.groups, ch), ch)));
  out_conv_ = register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(ch, config_.latent_channels, 3).padding(1)));
}

torch::Tensor UNetDecoderImpl::forward(const std::vector<torch::Tensor>& taps, const GuidanceFeatures* guidance,
                                       const torch::Tensor& temb) {
  if (static_cast<int>(taps.size()) != config_.tap_count()) throw ValidationError("decoder tap count mismatch");
  if (guidance != nullptr) check_guidance(taps, *guidance);
  auto skip_at = [&](std::size_t i) { return guidance != nullptr ? taps[i] + (*guidance)[i] : taps[i]; };
  auto h = skip_at(taps.size() - 1);
  std::size_t next_skip = taps.size() - 1;
  std::size_t block = 0;
  std::size_t up = 0;
  for (int l = config_.levels() - 1; l >= 0; --l) {
    for (int b = 0; b < config_.blocks_per_level; ++b) {
      --next_skip;
      h = blocks_[block++]->as<ResBlock>()->forward(torch::cat({h, skip_at(next_skip)}, 1), temb);
    }
    if (l > 0) {
      h = torch::nn::functional::interpolate(
          h, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
                 torch::kNearest));
      h = upsamples_[up++]->as<nn::Conv2d>()->forward(h);
    }
  }
  return out_conv_->forward(torch::silu(out_norm_->forward(h)));
}

DenoiserUNetImpl::DenoiserUNetImpl(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  encoder = register_module("encoder", UNetEncoder(config_));
  decoder = register_module("decoder", UNetDecoder(config_));
}

torch::Tensor DenoiserUNetImpl::assemble_input(const torch::Tensor& z_t, const torch::Tensor& condition) const {
  if (config_.condition_channels == 0) {
    if (condition.defined()) throw ValidationError("denoiser is not configured for a concatenated condition");
    return z_t;
  }
  if (!condition.defined() || condition.size(1) != config_.condition_channels) {
    throw ValidationError("denoiser expects a " + std::to_string(config_.condition_channels) +
                          "-channel concatenated condition");
  }
  if (condition.size(0) != z_t.size(0) || condition.size(2) != z_t.size(2) || condition.size(3) != z_t.size(3)) {
    throw ValidationError("condition and z_t differ in batch or spatial size");
  }
  return torch::cat({z_t, condition}, 1);
}

DenoiserOutput DenoiserUNetImpl::forward(const torch::Tensor& z_t, const torch::Tensor& condition,
                                         const torch::Tensor& t, const GuidanceFeatures* guidance) {
  if (z_t.dim() != 4 || z_t.size(1) != config_.latent_channels) {
    throw ValidationError("z_t must be [B," + std::to_string(config_.latent_channels) + ",H,W]");
  }
  auto enc = encoder->forward(assemble_input(z_t, condition), t);
  DenoiserOutput out;
  out.eps = decoder->forward(enc.taps, guidance, enc.temb);
  out.hidden = enc.hidden;
  out.skips = std::move(enc.taps);
  return out;
}

void check_guidance(const std::vector<torch::Tensor>& taps, const GuidanceFeatures& guidance) {
  if (guidance.size() != taps.size()) {
    throw ValidationError("guidance has " + std::to_string(guidance.size()) + " levels, denoiser exposes " +
                          std::to_string(taps.size()));
  }
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (guidance[i].sizes() != taps[i].sizes()) {
      std::ostringstream os;
      os << "guidance level " << i << " has shape " << guidance[i].sizes() << ", expected " << taps[i].sizes();
      throw ValidationError(os.str());
    }
  }
}

void copy_weights(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard no_grad;
  auto src_params = src.named_parameters(true);
  auto dst_params = dst.named_parameters(true);
  if (src_params.size() != dst_params.size()) throw ValidationError("copy_weights: architecture mismatch");
  for (auto& item : dst_params) {
    const auto* s = src_params.find(item.key());
    if (s == nullptr || s->sizes() != item.value().sizes()) {
      throw ValidationError("copy_weights: missing or mismatched parameter " + item.key());
    }
    item.value().copy_(*s);
  }
  auto src_buffers = src.named_buffers(true);
  for (auto& item : dst.named_buffers(true)) {
    const auto* s = src_buffers.find(item.key());
    if (s != nullptr) item.value().copy_(*s);
  }
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace segdiff
