#include "segdiff/schedule.hpp"

#include <cmath>

#include "segdiff/error.hpp"

namespace segdiff {

void ScheduleParams::validate() const {
  if (num_train_timesteps < 1) throw ConfigError("schedule needs T >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  }
  if (inference_steps < 1 || inference_steps > num_train_timesteps) {
    throw ConfigError("inference_steps must lie in [1, T]");
  }
}

std::vector<int> spaced_timesteps(int num_train_timesteps, int inference_steps) {
  std::vector<int> out;
  out.reserve(inference_steps);
  if (inference_steps == 1) {
    out.push_back(num_train_timesteps - 1);
    return out;
  }
  const double last = num_train_timesteps - 1;
  for (int i = 0; i < inference_steps; ++i) {
    out.push_back(static_cast<int>(std::lround(last * (inference_steps - 1 - i) / (inference_steps - 1))));
  }
  return out;
}

NoiseSchedule make_schedule(const ScheduleParams& params) {
  params.validate();
  const int T = params.num_train_timesteps;
  NoiseSchedule s;
  s.num_train_timesteps = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    // Endpoints are assigned exactly rather than through the interpolation.
    if (T == 1 || t == 0) {
      s.betas[t] = params.beta_start;
    } else if (t == T - 1) {
      s.betas[t] = params.beta_end;
    } else {
      s.betas[t] = params.beta_start + (params.beta_end - params.beta_start) * t / (T - 1);
    }
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  s.inference_timesteps = spaced_timesteps(T, params.inference_steps);
  return s;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == kCleanTimestep) return 1.0;
  if (t < 0 || t >= num_train_timesteps) {
    throw ValidationError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(num_train_timesteps) + ")");
  }
  return alpha_bars[t];
}

}  // namespace segdiff
