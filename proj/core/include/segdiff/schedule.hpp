#pragma once

#include <vector>

namespace segdiff {

/// Timestep index denoting the clean sample (alpha_bar == 1). Used as the
/// target of the last reverse step.
inline constexpr int kCleanTimestep = -1;

struct ScheduleParams {
  int num_train_timesteps = 1000;
  double beta_start = 8.5e-4;
  double beta_end = 1.2e-2;
  int inference_steps = 25;

  void validate() const;
};

/// Linear-beta noise schedule with its cumulative products and the
/// descending timestep subsequence used at inference.
struct NoiseSchedule {
  int num_train_timesteps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<int> inference_timesteps;  // strictly decreasing, first T-1, last 0

  /// alpha_bar[t], or 1.0 for kCleanTimestep.
  double alpha_bar(int t) const;
};

NoiseSchedule make_schedule(const ScheduleParams& params = {});

/// Evenly spaced descending timesteps covering [0, T-1]: round((T-1) * (n-1-i) / (n-1)).
std::vector<int> spaced_timesteps(int num_train_timesteps, int inference_steps);

}  // namespace segdiff
