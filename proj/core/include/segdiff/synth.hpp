#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segdiff/raster.hpp"

namespace segdiff {

/// Relative frequencies of the object families drawn into a scene.
struct ShapeMix {
  double rectangles = 0.5;
  double roads = 0.25;
  double blobs = 0.25;
};

/// Parameters of one synthetic scene. Class 0 is the background.
struct SceneSpec {
  int width = 64;
  int height = 64;
  int num_classes = 3;
  ShapeMix mix;
  int min_object_size = 8;
  int max_object_size = 24;
  int object_count = 0;  // 0: scale with image area
  double noise_sigma = 0.05;
  double shadow_probability = 0.5;
  double shadow_factor = 0.5;
  double palette_jitter = 0.08;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  Image image;  // 3 x H x W in [0, 1]
  LabelMap label;
  std::string id;
};

/// Simulated coarse-prediction errors.
struct DegradeParams {
  int jitter_radius = 0;   // max boundary displacement (Chebyshev pixels)
  double hole_rate = 0.0;  // fraction of objects that get an interior hole
  double flip_rate = 0.0;  // fraction of objects relabelled to another class
  int num_classes = 0;     // 0: infer as max label + 1 (at least 2)
  std::uint64_t seed = 0;

  void validate() const;
};

/// Canonical RGB colour of a class before per-scene jitter.
std::array<float, 3> class_base_color(int cls, int num_classes);

Sample generate_scene(const SceneSpec& spec);

/// `count` scenes whose seeds derive from `base.seed`; ids are
/// "<prefix><index>" with zero-padded indices.
std::vector<Sample> generate_corpus(const SceneSpec& base, int count, const std::string& prefix = "scene_");

LabelMap degrade_label(const LabelMap& labels, const DegradeParams& params);

/// Mirror image and label left-right.
Sample flip_horizontal(const Sample& sample);

}  // namespace segdiff
