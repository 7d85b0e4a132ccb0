#include "segdiff/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <iomanip>

#include "segdiff/error.hpp"
#include "segdiff/morphology.hpp"
#include "segdiff/rng.hpp"

namespace segdiff {

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("scene width/height must be positive");
  if (num_classes < 2) throw ConfigError("scene needs at least 2 classes");
  if (num_classes > 255) throw ConfigError("scene supports at most 255 classes (8-bit masks)");
  if (mix.rectangles < 0 || mix.roads < 0 || mix.blobs < 0) throw ConfigError("shape proportions must be non-negative");
  const double total = mix.rectangles + mix.roads + mix.blobs;
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("shape proportions must sum to 1");
  if (min_object_size < 2 || max_object_size < min_object_size) throw ConfigError("invalid object size range");
  if (object_count < 0) throw ConfigError("object_count must be >= 0");
  if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
  if (shadow_probability < 0 || shadow_probability > 1) throw ConfigError("shadow_probability must lie in [0,1]");
  if (shadow_factor <= 0 || shadow_factor > 1) throw ConfigError("shadow_factor must lie in (0,1]");
  if (palette_jitter < 0) throw ConfigError("palette_jitter must be >= 0");
}

void DegradeParams::validate() const {
  if (jitter_radius < 0) throw ConfigError("jitter radius must be >= 0");
  if (hole_rate < 0 || hole_rate > 1) throw ConfigError("hole_rate must lie in [0,1]");
  if (flip_rate < 0 || flip_rate > 1) throw ConfigError("flip_rate must lie in [0,1]");
  if (num_classes < 0) throw ConfigError("num_classes must be >= 0");
}

std::array<float, 3> class_base_color(int cls, int num_classes) {
  (void)num_classes;
  // Background is a muted soil tone; foreground hues follow the golden-angle sequence.
  if (cls == 0) return {0.42f, 0.40f, 0.33f};
  const double hue = std::fmod(0.08 + 0.61803398875 * (cls - 1), 1.0);
  const double s = 0.55;
  const double v = cls % 2 == 1 ? 0.80 : 0.62;
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

namespace {

struct Rect {
  int y0, x0, y1, x1;  // inclusive-exclusive
  bool overlaps(const Rect& o, int margin) const {
    return !(x1 + margin <= o.x0 || o.x1 + margin <= x0 || y1 + margin <= o.y0 || o.y1 + margin <= y0);
  }
};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

void paint_road(LabelMap& label, std::mt19937_64& rng, const SceneSpec& spec, std::int32_t cls) {
  const double cy = uniform_real(rng, 0, spec.height);
  const double cx = uniform_real(rng, 0, spec.width);
  const double theta = uniform_real(rng, 0, std::numbers::pi);
  const double half_width = 0.5 * uniform_int(rng, 3, std::max(3, spec.min_object_size / 2 + 2));
  const double diag = std::hypot(spec.width, spec.height);
  const double half_len = 0.5 * uniform_real(rng, std::min(diag, 2.0 * spec.max_object_size), diag);
  const double uy = std::sin(theta), ux = std::cos(theta);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double ry = y + 0.5 - cy, rx = x + 0.5 - cx;
      const double along = rx * ux + ry * uy;
      const double across = -rx * uy + ry * ux;
      if (std::abs(across) <= half_width && std::abs(along) <= half_len) label.at(y, x) = cls;
    }
  }
}

void paint_blob(LabelMap& label, std::mt19937_64& rng, const SceneSpec& spec, std::int32_t cls) {
  const double radius = 0.5 * uniform_int(rng, spec.min_object_size, spec.max_object_size);
  const double cy = uniform_real(rng, 0, spec.height);
  const double cx = uniform_real(rng, 0, spec.width);
  const double a1 = uniform_real(rng, 0.0, 0.25), a2 = uniform_real(rng, 0.0, 0.15);
  const double p1 = uniform_real(rng, 0, 2 * std::numbers::pi), p2 = uniform_real(rng, 0, 2 * std::numbers::pi);
  const int k1 = uniform_int(rng, 2, 3), k2 = uniform_int(rng, 4, 5);
  const double squash = uniform_real(rng, 0.6, 1.0);
  const int reach = static_cast<int>(std::ceil(radius * 1.5)) + 1;
  for (int y = std::max(0, static_cast<int>(cy) - reach); y < std::min(spec.height, static_cast<int>(cy) + reach); ++y) {
    for (int x = std::max(0, static_cast<int>(cx) - reach); x < std::min(spec.width, static_cast<int>(cx) + reach); ++x) {
      const double ry = (y + 0.5 - cy) / squash, rx = x + 0.5 - cx;
      const double phi = std::atan2(ry, rx);
      const double r = radius * (1.0 + a1 * std::sin(k1 * phi + p1) + a2 * std::sin(k2 * phi + p2));
      if (std::hypot(rx, ry) <= r) label.at(y, x) = cls;
    }
  }
}

void render_image(Sample& sample, std::mt19937_64& rng, const SceneSpec& spec) {
  std::vector<std::array<float, 3>> palette(spec.num_classes);
  for (int k = 0; k < spec.num_classes; ++k) {
    auto c = class_base_color(k, spec.num_classes);
    for (float& v : c) {
      v = std::clamp(v + static_cast<float>(uniform_real(rng, -spec.palette_jitter, spec.palette_jitter)), 0.0f, 1.0f);
    }
    palette[k] = c;
  }
  sample.image = Image(3, spec.height, spec.width, 0.0f);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const double v = palette[sample.label.at(y, x)][c] + (spec.noise_sigma > 0 ? noise(rng) : 0.0);
        sample.image.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  if (uniform_real(rng, 0, 1) < spec.shadow_probability) {
    // Straight band with a 2 px linear falloff on both sides.
    const double cy = uniform_real(rng, 0, spec.height), cx = uniform_real(rng, 0, spec.width);
    const double theta = uniform_real(rng, 0, std::numbers::pi);
    const double half = uniform_real(rng, 4.0, 10.0);
    const double uy = std::sin(theta), ux = std::cos(theta);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const double across = std::abs(-(x + 0.5 - cx) * uy + (y + 0.5 - cy) * ux);
        const double inside = std::clamp((half + 2.0 - across) / 2.0, 0.0, 1.0);
        const double factor = 1.0 - inside * (1.0 - spec.shadow_factor);
        for (int c = 0; c < 3; ++c) sample.image.at(c, y, x) = static_cast<float>(sample.image.at(c, y, x) * factor);
      }
    }
  }
  for (float& v : sample.image.data) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

Sample generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  Sample sample;
  sample.label = make_label_map(spec.height, spec.width, 0);
  const int count = spec.object_count > 0 ? spec.object_count
                                          : std::max(3, static_cast<int>(std::lround(spec.width * spec.height / 400.0)));
  std::discrete_distribution<int> family({spec.mix.rectangles, spec.mix.roads, spec.mix.blobs});
  std::vector<Rect> rects;
  std::vector<std::pair<Rect, std::int32_t>> pending_rects;
  for (int i = 0; i < count; ++i) {
    const int kind = family(rng);
    const auto cls = static_cast<std::int32_t>(uniform_int(rng, 1, spec.num_classes - 1));
    if (kind == 1) {
      paint_road(sample.label, rng, spec, cls);
    } else if (kind == 2) {
      paint_blob(sample.label, rng, spec, cls);
    } else {
      // Rectangles never touch each other, so each stays its own rectangular component.
      for (int attempt = 0; attempt < 50; ++attempt) {
        const int h = std::min(spec.height, uniform_int(rng, spec.min_object_size, spec.max_object_size));
        const int w = std::min(spec.width, uniform_int(rng, spec.min_object_size, spec.max_object_size));
        const int y0 = uniform_int(rng, 0, spec.height - h);
        const int x0 = uniform_int(rng, 0, spec.width - w);
        Rect r{y0, x0, y0 + h, x0 + w};
        if (std::any_of(rects.begin(), rects.end(), [&](const Rect& o) { return r.overlaps(o, 1); })) continue;
        rects.push_back(r);
        pending_rects.emplace_back(r, cls);
        break;
      }
    }
  }
  for (const auto& [r, cls] : pending_rects) {
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) sample.label.at(y, x) = cls;
    }
  }
  render_image(sample, rng, spec);
  std::ostringstream id;
  id << "scene_" << std::hex << spec.seed;
  sample.id = id.str();
  return sample;
}

std::vector<Sample> generate_corpus(const SceneSpec& base, int count, const std::string& prefix) {
  if (count < 0) throw ConfigError("corpus size must be >= 0");
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    SceneSpec spec = base;
    spec.seed = derive_seed(base.seed, static_cast<std::uint64_t>(i));
    Sample s = generate_scene(spec);
    std::ostringstream id;
    id << prefix << std::setw(5) << std::setfill('0') << i;
    s.id = id.str();
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// Chebyshev distance from each pixel of component `id` to the nearest pixel
// outside it; pixels beyond the image border count as outside.
std::vector<int> inner_distance(const Components& comps, std::int32_t id) {
  const int h = comps.ids.height, w = comps.ids.width;
  std::vector<int> d(static_cast<std::size_t>(h) * w, 0);
  auto at = [&](int y, int x) -> int& { return d[static_cast<std::size_t>(y) * w + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      at(y, x) = comps.ids.at(y, x) == id ? std::min(std::min(y + 1, h - y), std::min(x + 1, w - x)) : 0;
    }
  }
  // Two-pass chamfer with unit 8-neighbour weights is exact for L-infinity.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int& v = at(y, x);
      if (x > 0) v = std::min(v, at(y, x - 1) + 1);
      if (y > 0) {
        v = std::min(v, at(y - 1, x) + 1);
        if (x > 0) v = std::min(v, at(y - 1, x - 1) + 1);
        if (x + 1 < w) v = std::min(v, at(y - 1, x + 1) + 1);
      }
    }
  }
  for (int y = h - 1; y >= 0; --y) {
    for (int x = w - 1; x >= 0; --x) {
      int& v = at(y, x);
      if (x + 1 < w) v = std::min(v, at(y, x + 1) + 1);
      if (y + 1 < h) {
        v = std::min(v, at(y + 1, x) + 1);
        if (x > 0) v = std::min(v, at(y + 1, x - 1) + 1);
        if (x + 1 < w) v = std::min(v, at(y + 1, x + 1) + 1);
      }
    }
  }
  return d;
}

}  // namespace

LabelMap degrade_label(const LabelMap& labels, const DegradeParams& params) {
  params.validate();
  if (labels.empty()) return labels;
  int num_classes = params.num_classes;
  if (num_classes == 0) {
    num_classes = std::max(2, *std::max_element(labels.data.begin(), labels.data.end()) + 1);
  }
  check_label_range(labels, num_classes);
  std::mt19937_64 rng(params.seed);
  LabelMap work = labels;
  const int h = labels.height, w = labels.width;

  if (params.hole_rate > 0 || params.flip_rate > 0) {
    const Components comps = connected_components(labels);
    for (int id = 0; id < comps.count(); ++id) {
      if (comps.values[id] == 0) continue;
      const double u_flip = uniform_real(rng, 0, 1);
      const double u_hole = uniform_real(rng, 0, 1);
      if (u_flip < params.flip_rate) {
        auto target = static_cast<std::int32_t>(uniform_int(rng, 0, num_classes - 2));
        if (target >= comps.values[id]) ++target;
        for (std::size_t i = 0; i < work.pixels(); ++i) {
          if (comps.ids.data[i] == id) work.data[i] = target;
        }
        continue;
      }
      if (u_hole < params.hole_rate) {
        const std::vector<int> dist = inner_distance(comps, id);
        std::vector<std::size_t> centres;
        for (std::size_t i = 0; i < dist.size(); ++i) {
          if (comps.ids.data[i] == id && dist[i] >= 2) centres.push_back(i);
        }
        if (centres.empty()) continue;
        const std::size_t c = centres[uniform_int(rng, 0, static_cast<int>(centres.size()) - 1)];
        const int cy = static_cast<int>(c / w), cx = static_cast<int>(c % w);
        const int radius = uniform_int(rng, 1, std::min(4, dist[c] - 1));
        // Every hole pixel stays >= 2 px from the object's outside, so the hole is enclosed.
        for (int y = std::max(0, cy - radius); y <= std::min(h - 1, cy + radius); ++y) {
          for (int x = std::max(0, cx - radius); x <= std::min(w - 1, cx + radius); ++x) {
            if (std::hypot(y - cy, x - cx) < radius) work.at(y, x) = 0;
          }
        }
      }
    }
  }

  if (params.jitter_radius > 0) {
    const int r = params.jitter_radius;
    constexpr int kSpacing = 8;
    const int gh = h / kSpacing + 2, gw = w / kSpacing + 2;
    std::vector<double> gy(static_cast<std::size_t>(gh) * gw), gx(gy.size());
    for (std::size_t i = 0; i < gy.size(); ++i) {
      gy[i] = uniform_real(rng, -r, r);
      gx[i] = uniform_real(rng, -r, r);
    }
    auto sample_grid = [&](const std::vector<double>& g, int y, int x) {
      const double fy = static_cast<double>(y) / kSpacing, fx = static_cast<double>(x) / kSpacing;
      const int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
      const double ty = fy - iy, tx = fx - ix;
      auto at = [&](int a, int b) { return g[static_cast<std::size_t>(a) * gw + b]; };
      return (1 - ty) * ((1 - tx) * at(iy, ix) + tx * at(iy, ix + 1)) +
             ty * ((1 - tx) * at(iy + 1, ix) + tx * at(iy + 1, ix + 1));
    };
    LabelMap jittered = work;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int dy = std::clamp(static_cast<int>(std::lround(sample_grid(gy, y, x))), -r, r);
        const int dx = std::clamp(static_cast<int>(std::lround(sample_grid(gx, y, x))), -r, r);
        jittered.at(y, x) = work.at(std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
      }
    }
    work = std::move(jittered);
  }
  return work;
}

Sample flip_horizontal(const Sample& sample) {
  Sample out = sample;
  const int w = sample.label.width;
  for (int y = 0; y < sample.label.height; ++y) {
    for (int x = 0; x < w; ++x) out.label.at(y, x) = sample.label.at(y, w - 1 - x);
  }
  for (int c = 0; c < sample.image.channels; ++c) {
    for (int y = 0; y < sample.image.height; ++y) {
      for (int x = 0; x < w; ++x) out.image.at(c, y, x) = sample.image.at(c, y, w - 1 - x);
    }
  }
  return out;
}

}  // namespace segdiff
