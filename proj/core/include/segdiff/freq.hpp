#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segdiff/raster.hpp"

namespace segdiff {

/// Power of the orthonormal 2-D DFT, binned by radial frequency.
/// Bin b covers radius round(r·N) == b with N = min(H, W); radii beyond the
/// Nyquist bin (the spectrum corners) are folded into it, so every
/// coefficient is counted exactly once.
struct RadialSpectrum {
  std::vector<double> frequency;     // cycles/pixel, ascending, b / N
  std::vector<double> power;         // mean power per bin
  std::vector<std::int64_t> counts;  // coefficients per bin
  /// Σ power·count, equal to the spatial-domain energy (Parseval).
  double total_energy() const;
  /// Σ power·count over bins with lo <= frequency < hi.
  double band_energy(double lo, double hi) const;
};

RadialSpectrum radial_spectrum(const FloatMap& map);
/// [H,W] real tensor form.
RadialSpectrum radial_spectrum(const torch::Tensor& map);

struct TrajectorySnapshot {
  int timestep = 0;             // kCleanTimestep (-1) for the final clean estimate
  torch::Tensor latent;         // z_t, [C,H,W]
  torch::Tensor clean_estimate; // x̂0 predicted at this step, [C,H,W]; may be undefined
};

struct Trajectory {
  std::string id;
  std::vector<TrajectorySnapshot> snapshots;  // in sampling order (timesteps decreasing)
};

/// Directory layout: manifest.json plus one little-endian float32 file per tensor.
void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& dir);
Trajectory load_trajectory(const std::filesystem::path& dir);

struct FrequencyBand {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;  // exclusive; 1.0 covers the Nyquist bin
};

std::vector<FrequencyBand> default_bands();  // low [0, 0.125), high [0.125, 1)

/// Maps a [C,H,W] snapshot latent to [K,H,W] per-class maps (e.g. softmax probabilities).
using SnapshotDecoder = std::function<torch::Tensor(const torch::Tensor&)>;

struct StageSummary {
  int snapshots = 0;
  int transitions = 0;
  RadialSpectrum mean_spectrum;                 // averaged over snapshots and map channels
  std::map<std::string, double> mean_change;    // band → mean energy of consecutive differences
  bool empty() const { return snapshots == 0; }
};

struct StageDecomposition {
  int cut = 500;
  StageSummary initial;  // timesteps >= cut
  StageSummary final;    // timesteps < cut
  std::vector<std::string> notes;  // e.g. empty stages
};

/// Splits a trajectory at `cut`. Each consecutive pair contributes the band
/// energy of its decoded difference to the stage of the later snapshot.
StageDecomposition stage_decompose(const Trajectory& trajectory, const SnapshotDecoder& decode, int cut = 500,
                                   const std::vector<FrequencyBand>& bands = default_bands(),
                                   bool use_clean_estimate = false);

struct WienerCurve {
  double alpha_bar = 1.0;
  std::vector<double> frequency;
  std::vector<double> response;
};

/// ᾱ / (ᾱ + (1 − ᾱ) f²): the optimal linear denoiser under a 1/f² signal spectrum and unit noise.
WienerCurve wiener_response(double alpha_bar, const std::vector<double>& frequency);
/// ᾱ P(f) / (ᾱ P(f) + (1 − ᾱ) σ²) for a supplied signal power spectrum.
WienerCurve wiener_response_exact(double alpha_bar, const std::vector<double>& frequency,
                                  const std::vector<double>& signal_power, double noise_variance = 1.0);
/// Curve divided by its maximum.
WienerCurve normalized(const WienerCurve& curve);
/// n evenly spaced frequencies from 0 to 0.5 inclusive.
std::vector<double> frequency_grid(int n);

}  // namespace segdiff
