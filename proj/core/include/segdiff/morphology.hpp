#pragma once

#include <cstdint>
#include <vector>

#include "segdiff/raster.hpp"

namespace segdiff {

/// 4-connected components of equal-valued pixels. `ids` holds a component
/// index per pixel; `values[i]` is the label value of component i.
struct Components {
  LabelMap ids;
  std::vector<std::int32_t> values;
  std::vector<std::int64_t> sizes;
  int count() const { return static_cast<int>(values.size()); }
};

Components connected_components(const LabelMap& labels);

/// Chebyshev (square) dilation of a binary mask by `radius` pixels.
BinaryMap dilate_square(const BinaryMap& mask, int radius);

/// Exact Euclidean distance from every pixel to the nearest pixel with
/// mask == 1, plus the flat index of that nearest pixel. With an empty mask
/// every distance is +infinity and every index is -1.
struct DistanceField {
  std::vector<double> distance;
  std::vector<std::int64_t> nearest;
};

DistanceField euclidean_distance_transform(const BinaryMap& mask);

/// Pixels with at least one 4-neighbour of a different label value.
BinaryMap class_boundaries(const LabelMap& labels);

}  // namespace segdiff
