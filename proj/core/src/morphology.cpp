#include "segdiff/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace segdiff {

Components connected_components(const LabelMap& labels) {
  Components out;
  out.ids = LabelMap(1, labels.height, labels.width, -1);
  const int h = labels.height;
  const int w = labels.width;
  std::vector<std::int64_t> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (out.ids.at(y, x) >= 0) continue;
      const std::int32_t value = labels.at(y, x);
      const auto id = static_cast<std::int32_t>(out.values.size());
      std::int64_t size = 0;
      stack.clear();
      stack.push_back(static_cast<std::int64_t>(y) * w + x);
      out.ids.at(y, x) = id;
      while (!stack.empty()) {
        const std::int64_t p = stack.back();
        stack.pop_back();
        ++size;
        const int py = static_cast<int>(p / w);
        const int px = static_cast<int>(p % w);
        constexpr int dy[4] = {-1, 1, 0, 0};
        constexpr int dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = py + dy[k];
          const int nx = px + dx[k];
          if (!labels.contains(ny, nx)) continue;
          if (out.ids.at(ny, nx) >= 0 || labels.at(ny, nx) != value) continue;
          out.ids.at(ny, nx) = id;
          stack.push_back(static_cast<std::int64_t>(ny) * w + nx);
        }
      }
      out.values.push_back(value);
      out.sizes.push_back(size);
    }
  }
  return out;
}

BinaryMap dilate_square(const BinaryMap& mask, int radius) {
  if (radius <= 0) return mask;
  const int h = mask.height;
  const int w = mask.width;
  BinaryMap rows(1, h, w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, x - radius); k <= std::min(w - 1, x + radius) && !v; ++k) v = mask.at(y, k);
      rows.at(y, x) = v;
    }
  }
  BinaryMap out(1, h, w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, y - radius); k <= std::min(h - 1, y + radius) && !v; ++k) v = rows.at(k, x);
      out.at(y, x) = v;
    }
  }
  return out;
}

namespace {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) with argmin.
void distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& arg) {
  const int n = static_cast<int>(f.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k]) {
        --k;
        if (k < 0) break;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : s;
    z[k + 1] = kInf;
  }
  d.assign(n, kInf);
  arg.assign(n, -1);
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = q - v[j];
    d[q] = diff * diff + f[v[j]];
    arg[q] = v[j];
  }
}

}  // namespace

DistanceField euclidean_distance_transform(const BinaryMap& mask) {
  const int h = mask.height;
  const int w = mask.width;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Column pass: squared distance to the nearest set pixel in the same column.
  std::vector<double> col_d(static_cast<std::size_t>(h) * w, kInf);
  std::vector<int> col_arg(static_cast<std::size_t>(h) * w, -1);
  std::vector<double> f(h), d;
  std::vector<int> arg;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = mask.at(y, x) ? 0.0 : kInf;
    distance_1d(f, d, arg);
    for (int y = 0; y < h; ++y) {
      col_d[static_cast<std::size_t>(y) * w + x] = d[y];
      col_arg[static_cast<std::size_t>(y) * w + x] = arg[y];
    }
  }
  DistanceField out;
  out.distance.assign(static_cast<std::size_t>(h) * w, kInf);
  out.nearest.assign(static_cast<std::size_t>(h) * w, -1);
  f.assign(w, kInf);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = col_d[static_cast<std::size_t>(y) * w + x];
    distance_1d(f, d, arg);
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (arg[x] < 0) continue;
      out.distance[i] = std::sqrt(d[x]);
      const int src_x = arg[x];
      const int src_y = col_arg[static_cast<std::size_t>(y) * w + src_x];
      out.nearest[i] = static_cast<std::int64_t>(src_y) * w + src_x;
    }
  }
  return out;
}

BinaryMap class_boundaries(const LabelMap& labels) {
  BinaryMap out(1, labels.height, labels.width, 0);
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const auto v = labels.at(y, x);
      const bool edge = (y > 0 && labels.at(y - 1, x) != v) || (y + 1 < labels.height && labels.at(y + 1, x) != v) ||
                        (x > 0 && labels.at(y, x - 1) != v) || (x + 1 < labels.width && labels.at(y, x + 1) != v);
      out.at(y, x) = edge ? 1 : 0;
    }
  }
  return out;
}

}  // namespace segdiff
