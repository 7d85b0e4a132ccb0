#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "segdiff/raster.hpp"
#include "segdiff/synth.hpp"

namespace segdiff {

/// Issues found while pairing images with masks; loading continues past them.
struct LoadReport {
  std::vector<std::string> unmatched;  // stems with an image but no mask, or vice versa
  std::vector<std::string> warnings;
};

struct Dataset {
  std::vector<Sample> samples;  // stem-sorted
  LoadReport report;
};

/// Reads `root/split/{images,masks}/*.png`. Masks are 8-bit single-channel
/// class indices and must lie in [0, num_classes).
Dataset load_dataset(const std::filesystem::path& root, std::string_view split, int num_classes);

/// Writes `split_dir/images/<id>.png` and `split_dir/masks/<id>.png`.
void save_sample(const std::filesystem::path& split_dir, const Sample& sample);

Image read_image_png(const std::filesystem::path& path);
void write_image_png(const std::filesystem::path& path, const Image& image);
LabelMap read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const LabelMap& labels);

/// Sorted stems of `*.png` files in a directory (empty if it does not exist).
std::vector<std::string> png_stems(const std::filesystem::path& dir);

}  // namespace segdiff
