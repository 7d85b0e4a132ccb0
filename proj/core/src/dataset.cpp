#include "segdiff/dataset.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "segdiff/error.hpp"
#include "segdiff/log.hpp"

namespace fs = std::filesystem;

namespace segdiff {

std::vector<std::string> png_stems(const fs::path& dir) {
  std::vector<std::string> stems;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") stems.push_back(entry.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

Image read_image_png(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  Image img(3, bgr.rows, bgr.cols, 0.0f);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0f;
    }
  }
  return img;
}

void write_image_png(const fs::path& path, const Image& image) {
  if (image.channels != 3) throw ValidationError("write_image_png expects 3 channels");
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

LabelMap read_mask_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read mask " + path.string());
  if (m.channels() != 1 || m.depth() != CV_8U) {
    throw ValidationError("mask " + path.string() + " must be 8-bit single-channel");
  }
  LabelMap labels = make_label_map(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) labels.at(y, x) = row[x];
  }
  return labels;
}

void write_mask_png(const fs::path& path, const LabelMap& labels) {
  cv::Mat m(labels.height, labels.width, CV_8UC1);
  for (int y = 0; y < labels.height; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < labels.width; ++x) {
      const auto v = labels.at(y, x);
      if (v < 0 || v > 255) throw ValidationError("mask value does not fit in 8 bits");
      row[x] = static_cast<std::uint8_t>(v);
    }
  }
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write mask " + path.string());
}

void save_sample(const fs::path& split_dir, const Sample& sample) {
  fs::create_directories(split_dir / "images");
  fs::create_directories(split_dir / "masks");
  write_image_png(split_dir / "images" / (sample.id + ".png"), sample.image);
  write_mask_png(split_dir / "masks" / (sample.id + ".png"), sample.label);
}

Dataset load_dataset(const fs::path& root, std::string_view split, int num_classes) {
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  const fs::path dir = root / std::string(split);
  Dataset out;
  const auto image_stems = png_stems(dir / "images");
  const auto mask_stems = png_stems(dir / "masks");
  const std::set<std::string> masks(mask_stems.begin(), mask_stems.end());
  const std::set<std::string> images(image_stems.begin(), image_stems.end());
  for (const auto& s : image_stems) {
    if (!masks.contains(s)) out.report.unmatched.push_back("images/" + s + ".png");
  }
  for (const auto& s : mask_stems) {
    if (!images.contains(s)) out.report.unmatched.push_back("masks/" + s + ".png");
  }
  for (const auto& u : out.report.unmatched) log::warn("dataset ", dir.string(), ": no partner for ", u, ", skipped");

  for (const auto& stem : image_stems) {
    if (!masks.contains(stem)) continue;
    const fs::path mask_path = dir / "masks" / (stem + ".png");
    Sample s;
    s.id = stem;
    s.image = read_image_png(dir / "images" / (stem + ".png"));
    s.label = read_mask_png(mask_path);
    if (!s.image.same_spatial(s.label)) {
      throw ValidationError("image and mask sizes differ for " + mask_path.string());
    }
    check_label_range(s.label, num_classes, mask_path.string().c_str());
    out.samples.push_back(std::move(s));
  }
  if (out.samples.empty()) {
    const std::string msg = "dataset " + dir.string() + " contains no image/mask pairs";
    out.report.warnings.push_back(msg);
    log::warn(msg);
  }
  return out;
}

}  // namespace segdiff
