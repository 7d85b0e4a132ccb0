#include "segdiff/align.hpp"

#include <bit>
#include <fstream>

#include "segdiff/error.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace segdiff {

void AlignConfig::validate() const {
  if (lambda0 < 0.0) throw ConfigError("alignment lambda must be >= 0");
  if (stop_step < 0) throw ConfigError("alignment stop_step must be >= 0");
  if (grid < 1 || projector_width < 1) throw ConfigError("alignment grid and projector width must be positive");
}

void to_json(nlohmann::json& j, const AlignConfig& c) {
  j = {{"enabled", c.enabled},
       {"lambda0", c.lambda0},
       {"stop_step", c.stop_step},
       {"grid", c.grid},
       {"projector_width", c.projector_width}};
}

void from_json(const nlohmann::json& j, AlignConfig& c) {
  AlignConfig d;
  c.enabled = j.value("enabled", d.enabled);
  c.lambda0 = j.value("lambda0", d.lambda0);
  c.stop_step = j.value("stop_step", d.stop_step);
  c.grid = j.value("grid", d.grid);
  c.projector_width = j.value("projector_width", d.projector_width);
}

ProjectorImpl::ProjectorImpl(int hidden_channels, int target_dim, int grid, int width)
    : grid_(grid), target_dim_(target_dim) {
  mlp_ = register_module("mlp", nn::Sequential(nn::Linear(hidden_channels, width), nn::SiLU(),
                                               nn::Linear(width, width), nn::SiLU(), nn::Linear(width, target_dim)));
}

torch::Tensor ProjectorImpl::forward(const torch::Tensor& hidden) {
  if (hidden.dim() != 4) throw ValidationError("projector expects a [B,C,h,w] hidden map");
  auto pooled = F::adaptive_avg_pool2d(hidden, F::AdaptiveAvgPool2dFuncOptions({grid_, grid_}));
  return mlp_->forward(pooled.flatten(2).transpose(1, 2));
}

RepaLoss repa_loss(const torch::Tensor& projected, const torch::Tensor& targets) {
  if (projected.sizes() != targets.sizes()) {
    std::ostringstream os;
    os << "alignment patch shapes differ: " << projected.sizes() << " vs " << targets.sizes();
    throw ValidationError(os.str());
  }
  if (projected.dim() < 2) throw ValidationError("alignment inputs must be [..., N, D]");
  auto a = projected.flatten(0, -2);
  auto b = targets.flatten(0, -2).to(a.dtype());
  auto na = a.norm(2, -1);
  auto nb = b.norm(2, -1);
  auto usable = (na > kRepaNormEpsilon) & (nb > kRepaNormEpsilon);
  RepaLoss out;
  out.skipped = a.size(0) - usable.sum().item<std::int64_t>();
  auto cos = (a * b).sum(-1) / (na.clamp_min(kRepaNormEpsilon) * nb.clamp_min(kRepaNormEpsilon));
  cos = cos.clamp(-1.0, 1.0);
  auto weights = usable.to(cos.dtype());
  const auto count = weights.sum();
  if (out.skipped == a.size(0)) {
    out.loss = (cos * weights).sum();  // zero, still attached to the graph
  } else {
    out.loss = -(cos * weights).sum() / count;
  }
  return out;
}

torch::Tensor total_loss(const torch::Tensor& mse, const torch::Tensor& repa, std::int64_t step, double lambda0,
                         std::int64_t stop_step) {
  if (step < 0) throw ValidationError("training step must be >= 0");
  if (step >= stop_step || !repa.defined()) return mse;
  return mse + lambda0 * repa;
}

CoarseFeatureTargets::CoarseFeatureTargets(CoarseNet model, int grid) : model_(std::move(model)), grid_(grid) {
  for (auto& p : model_->parameters()) p.set_requires_grad(false);
}

int CoarseFeatureTargets::dim() const { return model_->config().widths.front(); }

torch::Tensor CoarseFeatureTargets::targets(const std::vector<std::string>& ids, const torch::Tensor& images) {
  if (static_cast<std::int64_t>(ids.size()) != images.size(0)) {
    throw ValidationError("alignment target ids do not match the image batch");
  }
  std::vector<torch::Tensor> rows(ids.size());
  std::vector<std::int64_t> todo;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = cache_.find(ids[i]);
    if (it != cache_.end()) {
      rows[i] = it->second;
    } else {
      todo.push_back(static_cast<std::int64_t>(i));
    }
  }
  if (!todo.empty()) {
    torch::NoGradGuard no_grad;
    auto feats = model_->features(images.index_select(0, torch::tensor(todo)));
    auto pooled = F::adaptive_avg_pool2d(feats, F::AdaptiveAvgPool2dFuncOptions({grid_, grid_}));
    pooled = pooled.flatten(2).transpose(1, 2).contiguous();  // [b, N, D]
    for (std::size_t k = 0; k < todo.size(); ++k) {
      rows[todo[k]] = pooled[static_cast<std::int64_t>(k)].clone();
      cache_[ids[todo[k]]] = rows[todo[k]];
    }
  }
  return torch::stack(rows);
}

void write_f32(const std::filesystem::path& path, const torch::Tensor& values) {
  static_assert(std::endian::native == std::endian::little, "float32 files are written little-endian");
  auto t = values.detach().to(torch::kFloat32).contiguous();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * 4));
  if (!out) throw IoError("short write to " + path.string());
}

torch::Tensor read_f32(const std::filesystem::path& path, std::vector<std::int64_t> shape) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot read " + path.string());
  std::int64_t expected = 1;
  for (auto s : shape) expected *= s;
  const auto bytes = static_cast<std::int64_t>(in.tellg());
  if (bytes != expected * 4) {
    throw ValidationError(path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected * 4));
  }
  in.seekg(0);
  auto t = torch::empty(shape, torch::kFloat32);
  in.read(reinterpret_cast<char*>(t.data_ptr<float>()), bytes);
  if (!in) throw IoError("short read from " + path.string());
  return t;
}

PrecomputedTargets::PrecomputedTargets(const std::filesystem::path& dir) : dir_(dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing alignment target manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
    dim_ = manifest.at("dim").get<int>();
    grid_ = manifest.at("grid").get<int>();
    files_ = manifest.at("entries").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed alignment target manifest: " + std::string(e.what()));
  }
  if (dim_ < 1 || grid_ < 1) throw ValidationError("alignment target manifest has non-positive dim or grid");
}

torch::Tensor PrecomputedTargets::targets(const std::vector<std::string>& ids, const torch::Tensor&) {
  std::vector<torch::Tensor> rows;
  for (const auto& id : ids) {
    auto cached = cache_.find(id);
    if (cached != cache_.end()) {
      rows.push_back(cached->second);
      continue;
    }
    auto it = files_.find(id);
    if (it == files_.end()) throw ValidationError("no precomputed alignment target for '" + id + "'");
    auto t = read_f32(dir_ / it->second, {static_cast<std::int64_t>(grid_) * grid_, dim_});
    if (!torch::isfinite(t).all().item<bool>()) throw ValidationError("non-finite alignment target for '" + id + "'");
    cache_[id] = t;
    rows.push_back(t);
  }
  return torch::stack(rows);
}

void write_precomputed_targets(const std::filesystem::path& dir, const std::map<std::string, torch::Tensor>& features,
                               int grid) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::object();
  int dim = 0;
  for (const auto& [id, t] : features) {
    if (t.dim() != 2 || t.size(0) != static_cast<std::int64_t>(grid) * grid) {
      throw ValidationError("alignment target for '" + id + "' must be [grid², D]");
    }
    if (dim == 0) dim = static_cast<int>(t.size(1));
    if (t.size(1) != dim) throw ValidationError("alignment targets disagree on feature dimension");
    const std::string file = id + ".f32";
    write_f32(dir / file, t);
    entries[id] = file;
  }
  std::ofstream out(dir / "manifest.json");
  out << nlohmann::json{{"dim", dim}, {"grid", grid}, {"entries", entries}}.dump(2) << "\n";
  if (!out) throw IoError("cannot write alignment target manifest in " + dir.string());
}

}  // namespace segdiff
