#include "segdiff/guidance.hpp"

#include <cmath>
#include <sstream>

#include "segdiff/error.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace segdiff {

void GuidanceConfig::validate() const {
  if (attention_dim < 1 || heads < 1 || attention_dim % heads != 0) {
    throw ConfigError("guidance attention_dim must be a positive multiple of heads");
  }
  if (max_tokens < 1) throw ConfigError("guidance max_tokens must be positive");
}

void to_json(nlohmann::json& j, const GuidanceConfig& c) {
  j = {{"attention_dim", c.attention_dim}, {"heads", c.heads}, {"max_tokens", c.max_tokens}};
}

void from_json(const nlohmann::json& j, GuidanceConfig& c) {
  GuidanceConfig d;
  c.attention_dim = j.value("attention_dim", d.attention_dim);
  c.heads = j.value("heads", d.heads);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
}

GuidanceModuleImpl::GuidanceModuleImpl(int sample_channels, int condition_channels, const GuidanceConfig& config)
    : sample_channels_(sample_channels), condition_channels_(condition_channels), config_(config) {
  config_.validate();
  const int d = config_.attention_dim;
  zero_conv = register_module(
      "zero_conv", nn::Conv2d(nn::Conv2dOptions(sample_channels + condition_channels, sample_channels, 1)));
  w_q = register_module("w_q", nn::Linear(nn::LinearOptions(sample_channels, d).bias(false)));
  w_k = register_module("w_k", nn::Linear(nn::LinearOptions(condition_channels, d).bias(false)));
  w_v = register_module("w_v", nn::Linear(nn::LinearOptions(condition_channels, d).bias(false)));
  w_o = register_module("w_o", nn::Linear(d, sample_channels));
  torch::NoGradGuard no_grad;
  zero_conv->weight.zero_();
  zero_conv->bias.zero_();
  w_o->weight.zero_();
  w_o->bias.zero_();
}

GuidanceModuleImpl::Projected GuidanceModuleImpl::project(const torch::Tensor& f_zt, const torch::Tensor& f_c) {
  if (f_zt.dim() != 4 || f_c.dim() != 4 || f_zt.size(1) != sample_channels_ || f_c.size(1) != condition_channels_) {
    std::ostringstream os;
    os << "guidance module expects [B," << sample_channels_ << ",H,W] and [B," << condition_channels_
       << ",H,W], got " << f_zt.sizes() << " and " << f_c.sizes();
    throw ValidationError(os.str());
  }
  if (f_zt.size(0) != f_c.size(0) || f_zt.size(2) != f_c.size(2) || f_zt.size(3) != f_c.size(3)) {
    throw ValidationError("guidance inputs differ in batch or spatial size");
  }
  const auto b = f_zt.size(0);
  const int heads = config_.heads;
  const int dh = config_.attention_dim / heads;

  Projected p;
  p.fused = zero_conv->forward(torch::cat({f_zt, f_c}, 1));
  auto kv_source = f_c;
  while (kv_source.size(2) * kv_source.size(3) > config_.max_tokens && kv_source.size(2) >= 2 &&
         kv_source.size(3) >= 2) {
    kv_source = F::avg_pool2d(kv_source, F::AvgPool2dFuncOptions(2));
  }
  auto tokens = [](const torch::Tensor& x) { return x.flatten(2).transpose(1, 2); };  // [B,N,C]
  auto split = [&](const torch::Tensor& x) { return x.view({b, -1, heads, dh}).transpose(1, 2); };
  p.q = split(w_q->forward(tokens(p.fused)));
  p.k = split(w_k->forward(tokens(kv_source)));
  p.v = split(w_v->forward(tokens(kv_source)));
  return p;
}

torch::Tensor GuidanceModuleImpl::attention_weights(const torch::Tensor& f_zt, const torch::Tensor& f_c) {
  auto p = project(f_zt, f_c);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.q.size(-1)));
  return torch::softmax(torch::matmul(p.q, p.k.transpose(-2, -1)) * scale, -1);
}

torch::Tensor GuidanceModuleImpl::forward(const torch::Tensor& f_zt, const torch::Tensor& f_c) {
  auto p = project(f_zt, f_c);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.q.size(-1)));
  auto weights = torch::softmax(torch::matmul(p.q, p.k.transpose(-2, -1)) * scale, -1);
  auto attended = torch::matmul(weights, p.v);  // [B,heads,N,dh]
  const auto b = f_zt.size(0), h = f_zt.size(2), w = f_zt.size(3);
  attended = attended.transpose(1, 2).reshape({b, h * w, config_.attention_dim});
  auto out = w_o->forward(attended).transpose(1, 2).reshape({b, sample_channels_, h, w});
  return p.fused + out;
}

std::vector<torch::Tensor> encode_conditions(UNetEncoder& frozen, const torch::Tensor& c_image,
                                             const torch::Tensor& c_rough, const torch::Tensor& t) {
  if (c_image.sizes() != c_rough.sizes()) {
    std::ostringstream os;
    os << "c_I " << c_image.sizes() << " and c_r " << c_rough.sizes() << " differ in shape";
    throw ValidationError(os.str());
  }
  const int in_ch = frozen->config().input_channels();
  auto pad = [in_ch](const torch::Tensor& c) {
    if (c.size(1) == in_ch) return c;
    if (c.size(1) > in_ch) throw ValidationError("condition has more channels than the encoder input");
    auto zeros = torch::zeros({c.size(0), in_ch - c.size(1), c.size(2), c.size(3)}, c.options());
    return torch::cat({c, zeros}, 1);
  };
  torch::NoGradGuard no_grad;
  // One batched pass over [c_I; c_r] keeps the two branches weight-shared by construction.
  const auto b = c_image.size(0);
  auto tt = timestep_batch(t, b);
  auto both = frozen->forward(torch::cat({pad(c_image), pad(c_rough)}, 0), torch::cat({tt, tt}, 0));
  std::vector<torch::Tensor> out;
  out.reserve(both.taps.size());
  for (auto& tap : both.taps) {
    auto halves = tap.split(b, 0);
    out.push_back(torch::cat({halves[0], halves[1]}, 1));
  }
  return out;
}

nn::ModuleList make_guidance_modules(const DenoiserConfig& denoiser, const GuidanceConfig& config) {
  nn::ModuleList modules;
  for (int ch : denoiser.tap_channels()) modules->push_back(GuidanceModule(ch, 2 * ch, config));
  return modules;
}

GuidanceFeatures guide(nn::ModuleList& modules, const std::vector<torch::Tensor>& sample_taps,
                       const std::vector<torch::Tensor>& condition_taps) {
  if (modules->size() != sample_taps.size() || sample_taps.size() != condition_taps.size()) {
    throw ValidationError("guidance level count mismatch: " + std::to_string(modules->size()) + " modules, " +
                          std::to_string(sample_taps.size()) + " sample taps, " +
                          std::to_string(condition_taps.size()) + " condition taps");
  }
  GuidanceFeatures out;
  out.reserve(sample_taps.size());
  for (std::size_t i = 0; i < sample_taps.size(); ++i) {
    out.push_back(modules[i]->as<GuidanceModule>()->forward(sample_taps[i], condition_taps[i]));
  }
  return out;
}

void freeze(nn::Module& module) {
  for (auto& p : module.parameters()) p.set_requires_grad(false);
}

}  // namespace segdiff
