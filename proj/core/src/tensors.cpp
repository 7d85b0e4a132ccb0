#include "segdiff/tensors.hpp"

#include <sstream>

#include "segdiff/error.hpp"

namespace segdiff {

torch::Tensor to_tensor(const Image& image) {
  return torch::from_blob(const_cast<float*>(image.data.data()), {image.channels, image.height, image.width},
                          torch::kFloat32)
      .clone();
}

torch::Tensor to_tensor(const LabelMap& labels) {
  return torch::from_blob(const_cast<std::int32_t*>(labels.data.data()), {labels.height, labels.width}, torch::kInt32)
      .to(torch::kInt64);
}

torch::Tensor stack_images(std::span<const Sample> samples) {
  std::vector<torch::Tensor> parts;
  parts.reserve(samples.size());
  for (const auto& s : samples) parts.push_back(to_tensor(s.image));
  return torch::stack(parts);
}

torch::Tensor stack_labels(std::span<const LabelMap> labels) {
  std::vector<torch::Tensor> parts;
  parts.reserve(labels.size());
  for (const auto& l : labels) parts.push_back(to_tensor(l));
  return torch::stack(parts);
}

torch::Tensor stack_labels(std::span<const Sample> samples) {
  std::vector<torch::Tensor> parts;
  parts.reserve(samples.size());
  for (const auto& s : samples) parts.push_back(to_tensor(s.label));
  return torch::stack(parts);
}

Image image_from_tensor(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw ValidationError("image tensor must be [C,H,W]");
  auto t = chw.detach().to(torch::kFloat32).contiguous();
  Image img(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
  std::copy_n(t.data_ptr<float>(), img.size(), img.data.begin());
  return img;
}

LabelMap labels_from_tensor(const torch::Tensor& hw) {
  if (hw.dim() != 2) throw ValidationError("label tensor must be [H,W]");
  auto t = hw.detach().to(torch::kInt32).contiguous();
  LabelMap out = make_label_map(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
  std::copy_n(t.data_ptr<std::int32_t>(), out.size(), out.data.begin());
  return out;
}

std::vector<LabelMap> labels_from_batch(const torch::Tensor& nhw) {
  if (nhw.dim() != 3) throw ValidationError("label batch must be [N,H,W]");
  std::vector<LabelMap> out;
  out.reserve(nhw.size(0));
  for (std::int64_t i = 0; i < nhw.size(0); ++i) out.push_back(labels_from_tensor(nhw[i]));
  return out;
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ValidationError(os.str());
  }
}

}  // namespace segdiff
