#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "segdiff/error.hpp"

namespace segdiff {

/// Dense channel-major (C, H, W) raster with value semantics.
template <typename T>
struct Raster {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {
    if (c <= 0 || h <= 0 || w <= 0) {
      throw ValidationError("raster dimensions must be positive");
    }
  }

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  T& at(int c, int y, int x) { return data[index(c, y, x)]; }
  const T& at(int c, int y, int x) const { return data[index(c, y, x)]; }
  T& at(int y, int x) { return data[index(0, y, x)]; }
  const T& at(int y, int x) const { return data[index(0, y, x)]; }

  bool contains(int y, int x) const { return y >= 0 && y < height && x >= 0 && x < width; }

  template <typename U>
  bool same_spatial(const Raster<U>& o) const {
    return height == o.height && width == o.width;
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Integer class-index map, one channel.
using LabelMap = Raster<std::int32_t>;
/// Three-channel float image in [0, 1].
using Image = Raster<float>;
/// Single-channel 0/1 mask.
using BinaryMap = Raster<std::uint8_t>;
/// Single-channel real-valued map (spectral analysis input).
using FloatMap = Raster<double>;

inline LabelMap make_label_map(int h, int w, std::int32_t fill = 0) { return LabelMap(1, h, w, fill); }
inline BinaryMap make_binary_map(int h, int w, std::uint8_t fill = 0) { return BinaryMap(1, h, w, fill); }

/// Pixels equal to `cls` set to 1.
BinaryMap class_mask(const LabelMap& labels, std::int32_t cls);

/// Throws ValidationError if any value lies outside [0, num_classes).
void check_label_range(const LabelMap& labels, int num_classes, const char* what = "label map");

}  // namespace segdiff
