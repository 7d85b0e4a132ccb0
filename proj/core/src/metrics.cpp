#include "segdiff/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "segdiff/error.hpp"
#include "segdiff/morphology.hpp"

namespace segdiff {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw ValidationError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  if (num_classes < 1) throw ValidationError("num_classes must be positive");
  if (!pred.same_spatial(gt) || pred.channels != 1 || gt.channels != 1) {
    throw ValidationError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                          " does not match ground truth " + std::to_string(gt.height) + "x" +
                          std::to_string(gt.width));
  }
  check_label_range(pred, num_classes, "prediction");
  check_label_range(gt, num_classes, "ground truth");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.data.size(); ++i) ++cm.at(gt.data[i], pred.data[i]);
  return cm;
}

ClassicalMetrics classical_metrics(const ConfusionMatrix& cm, std::optional<int> ignore_class) {
  const int k = cm.num_classes;
  const double total = static_cast<double>(cm.total());
  if (k < 1 || total <= 0) throw ValidationError("classical metrics need a nonempty confusion matrix");
  ClassicalMetrics m;
  m.iou.resize(k);
  m.f1.resize(k);
  std::vector<double> row(k, 0.0), col(k, 0.0);
  double diag = 0.0;
  for (int g = 0; g < k; ++g) {
    for (int p = 0; p < k; ++p) {
      row[g] += static_cast<double>(cm.at(g, p));
      col[p] += static_cast<double>(cm.at(g, p));
    }
    diag += static_cast<double>(cm.at(g, g));
  }
  double iou_sum = 0.0, f1_sum = 0.0;
  int defined = 0;
  for (int c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double fp = col[c] - tp;
    const double fn = row[c] - tp;
    if (tp + fp + fn == 0.0) continue;
    m.iou[c] = tp / (tp + fp + fn);
    m.f1[c] = 2.0 * tp / (2.0 * tp + fp + fn);
    if (ignore_class && *ignore_class == c) continue;
    iou_sum += *m.iou[c];
    f1_sum += *m.f1[c];
    ++defined;
  }
  if (defined > 0) {
    m.miou = iou_sum / defined;
    m.mean_f1 = f1_sum / defined;
  }
  m.oa = diag / total;
  double pe = 0.0;
  for (int c = 0; c < k; ++c) pe += (row[c] / total) * (col[c] / total);
  // p_e == 1 only when both maps are one identical class, i.e. perfect agreement.
  m.kappa = pe >= 1.0 ? 1.0 : (m.oa - pe) / (1.0 - pe);
  return m;
}

void WfmConfig::validate() const {
  if (tolerance < 1) throw ConfigError("WFm tolerance must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("WFm beta must be positive");
  if (!(sigma > 0.0)) throw ConfigError("WFm sigma must be positive");
}

BinaryMap boundary_band(const BinaryMap& mask, int tolerance) {
  if (tolerance < 0) throw ValidationError("boundary tolerance must be >= 0");
  BinaryMap inverse = mask;
  for (auto& v : inverse.data) v = v ? 0 : 1;
  const auto near_fg = dilate_square(mask, tolerance);
  const auto near_bg = dilate_square(inverse, tolerance);
  BinaryMap band = make_binary_map(mask.height, mask.width);
  for (std::size_t i = 0; i < band.data.size(); ++i) {
    band.data[i] = static_cast<std::uint8_t>(mask.data[i] ? near_bg.data[i] : near_fg.data[i]);
  }
  return band;
}

namespace {

// Zero-padded separable correlation with a symmetric 1-D kernel.
std::vector<double> separable_filter(const std::vector<double>& src, int h, int w, const std::vector<double>& kernel) {
  const int r = static_cast<int>(kernel.size()) / 2;
  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = std::max(-r, -x); k <= std::min(r, w - 1 - x); ++k) acc += kernel[k + r] * src[y * w + x + k];
      tmp[y * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = std::max(-r, -y); k <= std::min(r, h - 1 - y); ++k) acc += kernel[k + r] * tmp[(y + k) * w + x];
      out[y * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

double weighted_fmeasure(const BinaryMap& pred, const BinaryMap& gt, const WfmConfig& cfg) {
  if (!pred.same_spatial(gt)) throw ValidationError("WFm inputs differ in size");
  if (!(cfg.beta > 0.0) || !(cfg.sigma > 0.0)) throw ConfigError("WFm beta and sigma must be positive");
  const int h = gt.height, w = gt.width;
  const std::size_t n = gt.data.size();
  const bool gt_empty = std::none_of(gt.data.begin(), gt.data.end(), [](auto v) { return v != 0; });
  if (gt_empty) {
    const bool pred_empty = std::none_of(pred.data.begin(), pred.data.end(), [](auto v) { return v != 0; });
    return pred_empty ? 1.0 : 0.0;
  }

  std::vector<double> error(n);
  BinaryMap missed = make_binary_map(h, w);
  for (std::size_t i = 0; i < n; ++i) {
    const bool g = gt.data[i] != 0, p = pred.data[i] != 0;
    error[i] = g != p ? 1.0 : 0.0;
    missed.data[i] = static_cast<std::uint8_t>(g && !p);
  }
  const auto to_fg = euclidean_distance_transform(gt);
  const auto to_missed = euclidean_distance_transform(missed);

  std::vector<double> propagated = error;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.data[i]) continue;
    // Errors are 0/1 here, so "some nearest foreground pixel was missed" is a distance tie.
    propagated[i] = to_missed.distance[i] <= to_fg.distance[i] ? 1.0 : 0.0;
  }

  const int radius = static_cast<int>(std::ceil(4.0 * cfg.sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-(k * k) / (2.0 * cfg.sigma * cfg.sigma));
  const auto num = separable_filter(propagated, h, w, kernel);
  const auto den = separable_filter(std::vector<double>(n, 1.0), h, w, kernel);

  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.data[i]) {
      const double e = std::min(error[i], num[i] / den[i]);
      tp += 1.0 - e;
      fn += e;
    } else {
      fp += error[i] * (2.0 - std::exp(cfg.alpha * to_fg.distance[i]));
    }
  }
  if (tp <= 0.0) return 0.0;
  const double precision = tp / (tp + fp);
  const double recall = tp / (tp + fn);
  const double b2 = cfg.beta * cfg.beta;
  return (1.0 + b2) * precision * recall / (b2 * precision + recall);
}

std::optional<double> wfm_boundary(const LabelMap& pred, const LabelMap& gt, int num_classes, const WfmConfig& cfg,
                                   std::optional<int> ignore_class) {
  cfg.validate();
  if (!pred.same_spatial(gt)) throw ValidationError("WFm inputs differ in size");
  check_label_range(pred, num_classes, "prediction");
  check_label_range(gt, num_classes, "ground truth");
  const int first = num_classes == 2 ? 1 : 0;
  double sum = 0.0;
  int used = 0;
  for (int c = first; c < num_classes; ++c) {
    if (ignore_class && *ignore_class == c) continue;
    const auto gt_band = boundary_band(class_mask(gt, c), cfg.tolerance);
    if (std::none_of(gt_band.data.begin(), gt_band.data.end(), [](auto v) { return v != 0; })) continue;
    const auto pred_band = boundary_band(class_mask(pred, c), cfg.tolerance);
    sum += weighted_fmeasure(pred_band, gt_band, cfg);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / used;
}

MetricsReport evaluate_corpus(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                              const EvalOptions& options) {
  if (preds.size() != gts.size()) throw ValidationError("prediction and ground-truth counts differ");
  if (gts.empty()) throw ValidationError("cannot evaluate an empty corpus");
  for (int t : options.tolerances) {
    if (t < 1) throw ConfigError("WFm tolerance must be >= 1");
  }
  const std::size_t count = gts.size();
  const std::size_t ntol = options.tolerances.size();
  std::vector<ConfusionMatrix> matrices(count);
  std::vector<std::optional<double>> wfm(count * ntol);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        matrices[i] = confusion(preds[i], gts[i], options.num_classes);
        for (std::size_t t = 0; t < ntol; ++t) {
          WfmConfig cfg;
          cfg.tolerance = options.tolerances[t];
          cfg.beta = options.beta;
          cfg.sigma = options.sigma;
          wfm[i * ntol + t] = wfm_boundary(preds[i], gts[i], options.num_classes, cfg, options.ignore_class);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned threads = options.threads > 0 ? static_cast<unsigned>(options.threads)
                                         : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(count));
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  MetricsReport report;
  report.num_classes = options.num_classes;
  report.images = static_cast<std::int64_t>(count);
  report.ignore_class = options.ignore_class;
  ConfusionMatrix total(options.num_classes);
  for (const auto& m : matrices) total += m;
  const auto classical = classical_metrics(total, options.ignore_class);
  report.iou = classical.iou;
  report.f1 = classical.f1;
  report.miou = classical.miou;
  report.mean_f1 = classical.mean_f1;
  report.kappa = classical.kappa;
  report.oa = classical.oa;
  for (std::size_t t = 0; t < ntol; ++t) {
    double sum = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (const auto& v = wfm[i * ntol + t]) {
        sum += *v;
        ++used;
      }
    }
    report.wfm[options.tolerances[t]] = used > 0 ? std::optional<double>(sum / used) : std::nullopt;
  }
  return report;
}

namespace {

nlohmann::json optional_array(const std::vector<std::optional<double>>& values) {
  auto arr = nlohmann::json::array();
  for (const auto& v : values) arr.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return arr;
}

std::vector<std::optional<double>> optional_vector(const nlohmann::json& arr) {
  std::vector<std::optional<double>> out;
  for (const auto& v : arr) out.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("metrics report: " + what);
}

void check_unit(const nlohmann::json& v, const std::string& name, double lo = 0.0) {
  require(v.is_number(), name + " must be a number");
  const double x = v.get<double>();
  require(std::isfinite(x) && x >= lo - 1e-12 && x <= 1.0 + 1e-12, name + " out of range");
}

}  // namespace

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json wfm = nlohmann::json::object();
  for (const auto& [tol, v] : r.wfm) wfm[std::to_string(tol)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  return {{"num_classes", r.num_classes},
          {"images", r.images},
          {"iou", optional_array(r.iou)},
          {"f1", optional_array(r.f1)},
          {"miou", r.miou},
          {"mean_f1", r.mean_f1},
          {"kappa", r.kappa},
          {"oa", r.oa},
          {"wfm", wfm},
          {"missing", r.missing},
          {"ignore_class", r.ignore_class ? nlohmann::json(*r.ignore_class) : nlohmann::json(nullptr)}};
}

void validate_report_json(const nlohmann::json& j) {
  require(j.is_object(), "top level must be an object");
  for (const char* key : {"num_classes", "images", "iou", "f1", "miou", "mean_f1", "kappa", "oa", "wfm", "missing"}) {
    require(j.contains(key), std::string("missing field '") + key + "'");
  }
  require(j["num_classes"].is_number_integer() && j["num_classes"].get<int>() >= 1, "num_classes must be >= 1");
  require(j["images"].is_number_integer() && j["images"].get<std::int64_t>() >= 0, "images must be >= 0");
  const auto k = j["num_classes"].get<std::size_t>();
  for (const char* key : {"iou", "f1"}) {
    require(j[key].is_array() && j[key].size() == k, std::string(key) + " must hold num_classes entries");
    for (const auto& v : j[key]) {
      if (!v.is_null()) check_unit(v, key);
    }
  }
  check_unit(j["miou"], "miou");
  check_unit(j["mean_f1"], "mean_f1");
  check_unit(j["oa"], "oa");
  check_unit(j["kappa"], "kappa", -1.0);
  require(j["wfm"].is_object(), "wfm must be an object keyed by tolerance");
  for (const auto& [key, v] : j["wfm"].items()) {
    require(!key.empty() && std::all_of(key.begin(), key.end(), ::isdigit) && std::stoi(key) >= 1,
            "wfm key '" + key + "' is not a tolerance >= 1");
    if (!v.is_null()) check_unit(v, "wfm");
  }
  require(j["missing"].is_array(), "missing must be an array");
  for (const auto& v : j["missing"]) require(v.is_string(), "missing entries must be strings");
  if (j.contains("ignore_class") && !j["ignore_class"].is_null()) {
    require(j["ignore_class"].is_number_integer(), "ignore_class must be an integer or null");
  }
}

MetricsReport report_from_json(const nlohmann::json& j) {
  validate_report_json(j);
  MetricsReport r;
  r.num_classes = j["num_classes"].get<int>();
  r.images = j["images"].get<std::int64_t>();
  r.iou = optional_vector(j["iou"]);
  r.f1 = optional_vector(j["f1"]);
  r.miou = j["miou"].get<double>();
  r.mean_f1 = j["mean_f1"].get<double>();
  r.kappa = j["kappa"].get<double>();
  r.oa = j["oa"].get<double>();
  for (const auto& [key, v] : j["wfm"].items()) {
    r.wfm[std::stoi(key)] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  }
  r.missing = j["missing"].get<std::vector<std::string>>();
  if (j.contains("ignore_class") && !j["ignore_class"].is_null()) r.ignore_class = j["ignore_class"].get<int>();
  return r;
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  auto pct = [](const std::optional<double>& v) {
    std::ostringstream s;
    if (v) {
      s << std::fixed << std::setprecision(2) << 100.0 * *v;
    } else {
      s << "n/a";
    }
    return s.str();
  };
  os << "images: " << r.images;
  if (!r.missing.empty()) os << " (" << r.missing.size() << " missing predictions)";
  os << "\n\n" << std::left << std::setw(8) << "class" << std::right << std::setw(9) << "IoU" << std::setw(9) << "F1"
     << "\n";
  for (int c = 0; c < r.num_classes; ++c) {
    os << std::left << std::setw(8) << c << std::right << std::setw(9) << pct(r.iou[c]) << std::setw(9) << pct(r.f1[c]);
    if (r.ignore_class && *r.ignore_class == c) os << "  (ignored in means)";
    os << "\n";
  }
  os << "\nmIoU   " << std::setw(8) << 100.0 * r.miou << "\nmF1    " << std::setw(8) << 100.0 * r.mean_f1
     << "\nKappa  " << std::setw(8) << 100.0 * r.kappa << "\nOA     " << std::setw(8) << 100.0 * r.oa << "\n";
  for (const auto& [tol, v] : r.wfm) os << "WFm " << tol << "px " << std::setw(7) << pct(v) << "\n";
  return os.str();
}

}  // namespace segdiff
