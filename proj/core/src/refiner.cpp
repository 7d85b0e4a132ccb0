#include "segdiff/refiner.hpp"

#include <sstream>

#include "segdiff/error.hpp"

namespace segdiff {

RefinerConfig RefinerConfig::resolve() const {
  RefinerConfig r = *this;
  const int c = denoiser.latent_channels;
  if (!use_guidance) {
    r.denoiser.condition_channels = 2 * c;
  } else {
    r.denoiser.condition_channels = concat_image ? c : 0;
  }
  return r;
}

void RefinerConfig::validate() const {
  denoiser.validate();
  guidance.validate();
  align.validate();
  if (use_guidance && !conditions.any()) throw ConfigError("guidance needs at least one of image/rough conditions");
  if (align.enabled && align_target_dim < 1) throw ConfigError("align_target_dim must be positive");
}

void to_json(nlohmann::json& j, const ConditionSet& c) { j = {{"image", c.image}, {"rough", c.rough}}; }

void from_json(const nlohmann::json& j, ConditionSet& c) {
  c.image = j.value("image", true);
  c.rough = j.value("rough", true);
}

void to_json(nlohmann::json& j, const RefinerConfig& c) {
  j = {{"denoiser", c.denoiser},         {"guidance", c.guidance},
       {"align", c.align},               {"use_guidance", c.use_guidance},
       {"concat_image", c.concat_image}, {"conditions", c.conditions},
       {"align_target_dim", c.align_target_dim}};
}

void from_json(const nlohmann::json& j, RefinerConfig& c) {
  RefinerConfig d;
  c.denoiser = j.value("denoiser", d.denoiser);
  c.guidance = j.value("guidance", d.guidance);
  c.align = j.value("align", d.align);
  c.use_guidance = j.value("use_guidance", d.use_guidance);
  c.concat_image = j.value("concat_image", d.concat_image);
  c.conditions = j.value("conditions", d.conditions);
  c.align_target_dim = j.value("align_target_dim", d.align_target_dim);
}

RefinerImpl::RefinerImpl(const RefinerConfig& config) : config_(config.resolve()) {
  config_.validate();
  denoiser = register_module("denoiser", DenoiserUNet(config_.denoiser));
  if (config_.use_guidance) {
    frozen_encoder = register_module("frozen_encoder", UNetEncoder(config_.denoiser));
    copy_weights(*denoiser->encoder, *frozen_encoder);
    freeze(*frozen_encoder);
    guidance_modules = register_module("guidance", make_guidance_modules(config_.denoiser, config_.guidance));
  }
  if (config_.align.enabled) {
    const int hidden = config_.denoiser.tap_channels()[config_.denoiser.tap_count() - 2];
    projector = register_module("projector", Projector(hidden, config_.align_target_dim, config_.align.grid,
                                                       config_.align.projector_width));
  }
}

std::pair<torch::Tensor, torch::Tensor> RefinerImpl::apply_condition_set(const torch::Tensor& c_image,
                                                                         const torch::Tensor& c_rough) const {
  if (!c_image.defined() || !c_rough.defined()) throw ValidationError("refiner needs both condition tensors");
  if (c_image.sizes() != c_rough.sizes()) {
    std::ostringstream os;
    os << "c_I " << c_image.sizes() << " and c_r " << c_rough.sizes() << " differ in shape";
    throw ValidationError(os.str());
  }
  return {config_.conditions.image ? c_image : torch::zeros_like(c_image),
          config_.conditions.rough ? c_rough : torch::zeros_like(c_rough)};
}

RefinerOutput RefinerImpl::forward(const torch::Tensor& z_t, const torch::Tensor& c_image,
                                   const torch::Tensor& c_rough, const torch::Tensor& t) {
  auto [ci, cr] = apply_condition_set(c_image, c_rough);
  if (ci.size(0) != z_t.size(0) || ci.size(2) != z_t.size(2) || ci.size(3) != z_t.size(3)) {
    throw ValidationError("conditions and z_t differ in batch or spatial size");
  }
  RefinerOutput out;
  if (!config_.use_guidance) {
    auto res = denoiser->forward(z_t, torch::cat({ci, cr}, 1), t);
    out.eps = res.eps;
    out.hidden = res.hidden;
    return out;
  }
  auto enc = denoiser->encoder->forward(denoiser->assemble_input(z_t, config_.concat_image ? ci : torch::Tensor()), t);
  auto f_c = encode_conditions(frozen_encoder, ci, cr, t);
  out.guidance = guide(guidance_modules, enc.taps, f_c);
  out.eps = denoiser->decoder->forward(enc.taps, &out.guidance, enc.temb);
  out.hidden = enc.hidden;
  return out;
}

torch::Tensor RefinerImpl::guided_eps(const torch::Tensor& z_t, const torch::Tensor& c_image,
                                      const torch::Tensor& c_rough, const torch::Tensor& t, double weight) {
  const auto b = z_t.size(0);
  auto tt = timestep_batch(t, b);
  auto zeros = torch::zeros_like(c_image);
  auto out = forward(torch::cat({z_t, z_t}, 0), torch::cat({c_image, zeros}, 0), torch::cat({c_rough, zeros}, 0),
                     torch::cat({tt, tt}, 0));
  auto halves = out.eps.split(b, 0);
  return halves[1] + weight * (halves[0] - halves[1]);
}

void warm_start(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard no_grad;
  auto src_params = src.named_parameters(true);
  for (auto& item : dst.named_parameters(true)) {
    const auto* s = src_params.find(item.key());
    if (s == nullptr) throw ValidationError("warm start: source lacks parameter " + item.key());
    auto& d = item.value();
    if (s->sizes() == d.sizes()) {
      d.copy_(*s);
      continue;
    }
    const bool input_conv = item.key().size() >= 17 &&
                            item.key().compare(item.key().size() - 17, 17, "input_conv.weight") == 0;
    if (!input_conv || s->dim() != 4 || s->size(0) != d.size(0) || s->size(1) > d.size(1)) {
      std::ostringstream os;
      os << "warm start: shape mismatch for " << item.key() << ": " << s->sizes() << " vs " << d.sizes();
      throw ValidationError(os.str());
    }
    d.zero_();
    d.narrow(1, 0, s->size(1)).copy_(*s);
  }
}

void RefinerImpl::init_from(DenoiserUNet warm) {
  warm_start(*warm, *denoiser);
  if (frozen_encoder) {
    copy_weights(*denoiser->encoder, *frozen_encoder);
    freeze(*frozen_encoder);
  }
}

std::vector<torch::Tensor> RefinerImpl::trainable_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& p : parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

}  // namespace segdiff
