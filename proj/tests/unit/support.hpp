#pragma once

// Hand-rolled generators and small helpers shared by the unit tests.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segdiff/log.hpp"
#include "segdiff/raster.hpp"

namespace segdiff::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }
  std::uint64_t seed() { return rng_(); }

  LabelMap labels(int h, int w, int k) {
    LabelMap m = make_label_map(h, w);
    for (auto& v : m.data) v = integer(0, k - 1);
    return m;
  }

  BinaryMap binary(int h, int w, double p = 0.5) {
    BinaryMap m = make_binary_map(h, w);
    for (auto& v : m.data) v = coin(p) ? 1 : 0;
    return m;
  }

  /// A few filled rectangles of random classes on background 0.
  LabelMap blocky(int h, int w, int k, int rects) {
    LabelMap m = make_label_map(h, w);
    for (int r = 0; r < rects; ++r) {
      int y0 = integer(0, h - 2), x0 = integer(0, w - 2);
      int y1 = integer(y0 + 1, h), x1 = integer(x0 + 1, w);
      int c = integer(1, k - 1);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = c;
    }
    return m;
  }

  FloatMap floats(int h, int w) {
    FloatMap m(1, h, w);
    for (auto& v : m.data) v = real(-1.0, 1.0);
    return m;
  }

 private:
  std::mt19937_64 rng_;
};

inline BinaryMap square_mask(int size, int y0, int x0, int side) {
  BinaryMap m = make_binary_map(size, size);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) m.at(y, x) = 1;
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("segdiff_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Captures warnings emitted while alive.
class LogCapture {
 public:
  LogCapture() {
    previous_ = log::set_sink([this](log::Level lvl, std::string_view msg) {
      if (lvl >= log::Level::kWarn) warnings.emplace_back(msg);
    });
  }
  ~LogCapture() { log::set_sink(previous_); }
  LogCapture(const LogCapture&) = delete;
  LogCapture& operator=(const LogCapture&) = delete;

  bool contains(const std::string& needle) const {
    for (const auto& w : warnings)
      if (w.find(needle) != std::string::npos) return true;
    return false;
  }

  std::vector<std::string> warnings;

 private:
  log::Sink previous_;
};

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace segdiff::testing
