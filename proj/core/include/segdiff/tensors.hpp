#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "segdiff/raster.hpp"
#include "segdiff/synth.hpp"

namespace segdiff {

/// [C, H, W] float32 tensor copy of an image.
torch::Tensor to_tensor(const Image& image);
/// [H, W] int64 tensor copy of a label map.
torch::Tensor to_tensor(const LabelMap& labels);

/// Stacks images to [N, 3, H, W] and labels to [N, H, W].
torch::Tensor stack_images(std::span<const Sample> samples);
torch::Tensor stack_labels(std::span<const LabelMap> labels);
torch::Tensor stack_labels(std::span<const Sample> samples);

Image image_from_tensor(const torch::Tensor& chw);
LabelMap labels_from_tensor(const torch::Tensor& hw);
std::vector<LabelMap> labels_from_batch(const torch::Tensor& nhw);

/// Throws ValidationError unless `a` and `b` have identical shapes.
void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what);

}  // namespace segdiff
