#include "segdiff/freq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "segdiff/align.hpp"
#include "segdiff/error.hpp"

namespace segdiff {

double RadialSpectrum::total_energy() const {
  double e = 0.0;
  for (std::size_t b = 0; b < power.size(); ++b) e += power[b] * static_cast<double>(counts[b]);
  return e;
}

double RadialSpectrum::band_energy(double lo, double hi) const {
  double e = 0.0;
  for (std::size_t b = 0; b < power.size(); ++b) {
    if (frequency[b] >= lo && frequency[b] < hi) e += power[b] * static_cast<double>(counts[b]);
  }
  return e;
}

RadialSpectrum radial_spectrum(const torch::Tensor& map) {
  if (map.dim() != 2 || map.numel() == 0) throw ValidationError("radial spectrum expects a nonempty [H,W] map");
  auto x = map.to(torch::kFloat64).contiguous();
  if (!torch::isfinite(x).all().item<bool>()) throw ValidationError("radial spectrum input is not finite");
  const auto h = x.size(0), w = x.size(1);
  auto coeffs = torch::fft::fft2(x, c10::nullopt, {-2, -1}, "ortho");
  auto power = torch::abs(coeffs).square().contiguous();
  const auto* p = power.data_ptr<double>();

  const std::int64_t n = std::min(h, w);
  const std::int64_t nyquist = n / 2;
  RadialSpectrum s;
  s.frequency.resize(nyquist + 1);
  s.power.assign(nyquist + 1, 0.0);
  s.counts.assign(nyquist + 1, 0);
  for (std::int64_t b = 0; b <= nyquist; ++b) s.frequency[b] = static_cast<double>(b) / static_cast<double>(n);
  for (std::int64_t ky = 0; ky < h; ++ky) {
    const double fy = static_cast<double>(ky <= h / 2 ? ky : ky - h) / static_cast<double>(h);
    for (std::int64_t kx = 0; kx < w; ++kx) {
      const double fx = static_cast<double>(kx <= w / 2 ? kx : kx - w) / static_cast<double>(w);
      auto bin = static_cast<std::int64_t>(std::llround(std::sqrt(fy * fy + fx * fx) * static_cast<double>(n)));
      bin = std::min(bin, nyquist);
      s.power[bin] += p[ky * w + kx];
      ++s.counts[bin];
    }
  }
  for (std::size_t b = 0; b < s.power.size(); ++b) {
    if (s.counts[b] > 0) s.power[b] /= static_cast<double>(s.counts[b]);
  }
  return s;
}

RadialSpectrum radial_spectrum(const FloatMap& map) {
  if (map.channels != 1) throw ValidationError("radial spectrum expects a single-channel map");
  auto t = torch::from_blob(const_cast<double*>(map.data.data()), {map.height, map.width}, torch::kFloat64);
  return radial_spectrum(t.clone());
}

namespace {

std::string tensor_file(const std::string& prefix, std::size_t index) {
  std::ostringstream os;
  os << prefix << "_" << std::setw(4) << std::setfill('0') << index << ".f32";
  return os.str();
}

}  // namespace

void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& dir) {
  if (trajectory.snapshots.empty()) throw ValidationError("cannot save an empty trajectory");
  std::filesystem::create_directories(dir);
  const auto shape = trajectory.snapshots.front().latent.sizes().vec();
  nlohmann::json snaps = nlohmann::json::array();
  for (std::size_t i = 0; i < trajectory.snapshots.size(); ++i) {
    const auto& s = trajectory.snapshots[i];
    if (s.latent.sizes().vec() != shape) throw ValidationError("trajectory snapshots differ in shape");
    nlohmann::json entry = {{"timestep", s.timestep}, {"latent", tensor_file("latent", i)}};
    write_f32(dir / entry["latent"].get<std::string>(), s.latent);
    if (s.clean_estimate.defined()) {
      entry["clean_estimate"] = tensor_file("clean", i);
      write_f32(dir / entry["clean_estimate"].get<std::string>(), s.clean_estimate);
    }
    snaps.push_back(entry);
  }
  std::ofstream out(dir / "manifest.json");
  out << nlohmann::json{{"id", trajectory.id}, {"shape", shape}, {"dtype", "float32-le"}, {"snapshots", snaps}}.dump(2)
      << "\n";
  if (!out) throw IoError("cannot write trajectory manifest in " + dir.string());
}

Trajectory load_trajectory(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing trajectory manifest in " + dir.string());
  Trajectory t;
  try {
    nlohmann::json m;
    in >> m;
    t.id = m.value("id", std::string());
    const auto shape = m.at("shape").get<std::vector<std::int64_t>>();
    for (const auto& entry : m.at("snapshots")) {
      TrajectorySnapshot s;
      s.timestep = entry.at("timestep").get<int>();
      s.latent = read_f32(dir / entry.at("latent").get<std::string>(), shape);
      if (entry.contains("clean_estimate")) {
        s.clean_estimate = read_f32(dir / entry.at("clean_estimate").get<std::string>(), shape);
      }
      t.snapshots.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed trajectory manifest in " + dir.string() + ": " + e.what());
  }
  return t;
}

std::vector<FrequencyBand> default_bands() { return {{"low", 0.0, 0.125}, {"high", 0.125, 1.0}}; }

namespace {

void accumulate(RadialSpectrum& acc, const RadialSpectrum& s) {
  if (acc.power.empty()) {
    acc = s;
    return;
  }
  if (acc.power.size() != s.power.size()) throw ValidationError("trajectory maps differ in size");
  for (std::size_t b = 0; b < s.power.size(); ++b) acc.power[b] += s.power[b];
}

}  // namespace

StageDecomposition stage_decompose(const Trajectory& trajectory, const SnapshotDecoder& decode, int cut,
                                   const std::vector<FrequencyBand>& bands, bool use_clean_estimate) {
  StageDecomposition out;
  out.cut = cut;
  const auto& snaps = trajectory.snapshots;
  for (std::size_t i = 1; i < snaps.size(); ++i) {
    if (snaps[i].timestep >= snaps[i - 1].timestep) {
      throw OrderingError("trajectory timesteps must be strictly decreasing");
    }
  }
  auto stage_of = [&](int t) -> StageSummary& { return t >= cut ? out.initial : out.final; };
  for (auto* st : {&out.initial, &out.final}) {
    for (const auto& b : bands) st->mean_change[b.name] = 0.0;
  }

  torch::Tensor previous;
  for (const auto& snap : snaps) {
    const auto& source = use_clean_estimate ? snap.clean_estimate : snap.latent;
    if (!source.defined()) throw ValidationError("trajectory snapshot lacks the requested tensor");
    auto maps = decode(source).to(torch::kFloat64);
    if (maps.dim() != 3) throw ValidationError("snapshot decoder must return [K,H,W] maps");
    auto& stage = stage_of(snap.timestep);
    RadialSpectrum mean;
    for (std::int64_t k = 0; k < maps.size(0); ++k) accumulate(mean, radial_spectrum(maps[k]));
    for (auto& v : mean.power) v /= static_cast<double>(maps.size(0));
    accumulate(stage.mean_spectrum, mean);
    ++stage.snapshots;

    if (previous.defined()) {
      auto diff = maps - previous;
      for (std::int64_t k = 0; k < diff.size(0); ++k) {
        const auto spec = radial_spectrum(diff[k]);
        for (const auto& b : bands) stage.mean_change[b.name] += spec.band_energy(b.lo, b.hi);
      }
      ++stage.transitions;
    }
    previous = maps;
  }

  for (auto* st : {&out.initial, &out.final}) {
    if (st->snapshots > 0) {
      for (auto& v : st->mean_spectrum.power) v /= static_cast<double>(st->snapshots);
    }
    if (st->transitions > 0) {
      for (auto& [name, v] : st->mean_change) v /= static_cast<double>(st->transitions);
    }
  }
  if (out.initial.empty()) out.notes.push_back("initial stage (t >= " + std::to_string(cut) + ") is empty");
  if (out.final.empty()) out.notes.push_back("final stage (t < " + std::to_string(cut) + ") is empty");
  return out;
}

namespace {

void check_alpha_bar(double alpha_bar) {
  if (!(alpha_bar > 0.0) || alpha_bar > 1.0) {
    throw DomainError("alpha_bar must lie in (0, 1], got " + std::to_string(alpha_bar));
  }
}

}  // namespace

WienerCurve wiener_response(double alpha_bar, const std::vector<double>& frequency) {
  check_alpha_bar(alpha_bar);
  WienerCurve c{alpha_bar, frequency, {}};
  c.response.reserve(frequency.size());
  for (double f : frequency) {
    if (!(f >= 0.0)) throw DomainError("frequencies must be >= 0");
    c.response.push_back(alpha_bar / (alpha_bar + (1.0 - alpha_bar) * f * f));
  }
  return c;
}

WienerCurve wiener_response_exact(double alpha_bar, const std::vector<double>& frequency,
                                  const std::vector<double>& signal_power, double noise_variance) {
  check_alpha_bar(alpha_bar);
  if (frequency.size() != signal_power.size()) throw ValidationError("frequency and power grids differ in length");
  if (!(noise_variance > 0.0)) throw DomainError("noise variance must be positive");
  WienerCurve c{alpha_bar, frequency, {}};
  for (std::size_t i = 0; i < frequency.size(); ++i) {
    if (!(signal_power[i] >= 0.0)) throw DomainError("signal power must be >= 0");
    const double s = alpha_bar * signal_power[i];
    const double denom = s + (1.0 - alpha_bar) * noise_variance;
    c.response.push_back(denom > 0.0 ? s / denom : 1.0);
  }
  return c;
}

WienerCurve normalized(const WienerCurve& curve) {
  WienerCurve c = curve;
  const double peak = c.response.empty() ? 0.0 : *std::max_element(c.response.begin(), c.response.end());
  if (peak > 0.0) {
    for (auto& v : c.response) v /= peak;
  }
  return c;
}

std::vector<double> frequency_grid(int n) {
  if (n < 2) throw ValidationError("frequency grid needs at least 2 points");
  std::vector<double> f(n);
  for (int i = 0; i < n; ++i) f[i] = 0.5 * i / (n - 1);
  return f;
}

}  // namespace segdiff
