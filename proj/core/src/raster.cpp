#include "segdiff/raster.hpp"

#include <string>

namespace segdiff {

BinaryMap class_mask(const LabelMap& labels, std::int32_t cls) {
  BinaryMap out(1, labels.height, labels.width, 0);
  for (std::size_t i = 0; i < labels.pixels(); ++i) {
    out.data[i] = labels.data[i] == cls ? 1 : 0;
  }
  return out;
}

void check_label_range(const LabelMap& labels, int num_classes, const char* what) {
  for (std::int32_t v : labels.data) {
    if (v < 0 || v >= num_classes) {
      throw ValidationError(std::string(what) + ": class index " + std::to_string(v) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace segdiff
