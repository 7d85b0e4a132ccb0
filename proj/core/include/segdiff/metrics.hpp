#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/raster.hpp"

namespace segdiff {

/// K×K counts, rows = ground truth, columns = prediction.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int k = 0) : num_classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}
  std::int64_t& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
  std::int64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes);

struct ClassicalMetrics {
  std::vector<std::optional<double>> iou;  // nullopt for classes absent from both maps
  std::vector<std::optional<double>> f1;
  double miou = 0.0;
  double mean_f1 = 0.0;
  double kappa = 0.0;
  double oa = 0.0;
};

/// `ignore_class` is still reported per class but left out of the means.
ClassicalMetrics classical_metrics(const ConfusionMatrix& cm, std::optional<int> ignore_class = std::nullopt);

struct WfmConfig {
  int tolerance = 3;
  double beta = 1.0;
  double sigma = 5.0;
  double alpha = -0.13862943611198905;  // ln(0.5) / 5
  void validate() const;
};

/// Pixels within Chebyshev distance `tolerance` of a pixel holding the
/// opposite value. Tolerance 1 yields the one-pixel inner and outer rings.
BinaryMap boundary_band(const BinaryMap& mask, int tolerance);

/// Weighted F-measure of a binary prediction against a binary ground truth.
/// Background errors inherit the error of their nearest foreground pixel
/// (ties resolve to the larger error) before Gaussian smoothing; the kernel
/// is truncated at 4σ and renormalised at the image border.
double weighted_fmeasure(const BinaryMap& pred, const BinaryMap& gt, const WfmConfig& cfg = {});

/// Macro WFm over per-class boundary bands; classes with no ground-truth
/// boundary are skipped, two-class maps use class 1 only. nullopt when no
/// class qualifies.
std::optional<double> wfm_boundary(const LabelMap& pred, const LabelMap& gt, int num_classes, const WfmConfig& cfg,
                                   std::optional<int> ignore_class = std::nullopt);

struct EvalOptions {
  int num_classes = 3;
  std::vector<int> tolerances = {1, 3, 5};
  double beta = 1.0;
  double sigma = 5.0;
  std::optional<int> ignore_class;
  int threads = 0;  // 0 = hardware concurrency
};

struct MetricsReport {
  int num_classes = 0;
  std::int64_t images = 0;
  std::vector<std::optional<double>> iou;
  std::vector<std::optional<double>> f1;
  double miou = 0.0;
  double mean_f1 = 0.0;
  double kappa = 0.0;
  double oa = 0.0;
  /// Mean per-image WFm at each tolerance; nullopt if no image had a boundary.
  std::map<int, std::optional<double>> wfm;
  std::vector<std::string> missing;  // ground-truth ids without a prediction
  std::optional<int> ignore_class;
};

/// Corpus metrics: confusion summed over images, WFm averaged per image.
/// Images are processed in parallel; the reduction order is fixed.
MetricsReport evaluate_corpus(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                              const EvalOptions& options);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
/// Throws ValidationError describing the first schema violation.
void validate_report_json(const nlohmann::json& j);
/// Fixed-width text table of the report.
std::string format_report(const MetricsReport& report);

}  // namespace segdiff
