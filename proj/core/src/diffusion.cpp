#include "segdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "segdiff/error.hpp"
#include "segdiff/tensors.hpp"

namespace segdiff {

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, double alpha_bar) {
  check_same_shape(z0, eps, "add_noise");
  return std::sqrt(alpha_bar) * z0 + std::sqrt(1.0 - alpha_bar) * eps;
}

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, int t, const NoiseSchedule& schedule) {
  return add_noise(z0, eps, schedule.alpha_bar(t));
}

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, const torch::Tensor& timesteps,
                        const NoiseSchedule& schedule) {
  check_same_shape(z0, eps, "add_noise");
  if (timesteps.dim() != 1 || timesteps.size(0) != z0.size(0)) {
    throw ValidationError("add_noise: need one timestep per batch element");
  }
  auto table = torch::tensor(schedule.alpha_bars, torch::TensorOptions().dtype(torch::kFloat64));
  auto ab = table.index_select(0, timesteps.to(torch::kInt64)).to(z0.scalar_type());
  std::vector<std::int64_t> shape(z0.dim(), 1);
  shape[0] = z0.size(0);
  ab = ab.view(shape);
  return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

int cubic_timestep(double u, int num_train_timesteps) {
  const double T = num_train_timesteps;
  const double r = u / T;
  const double scaled = std::floor(T * (1.0 - r * r * r));
  return static_cast<int>(std::clamp(scaled, 0.0, T - 1.0));
}

int uniform_timestep(double u, int num_train_timesteps) {
  return static_cast<int>(std::clamp(std::floor(u), 0.0, num_train_timesteps - 1.0));
}

torch::Tensor sample_timesteps(int batch, int num_train_timesteps, bool cubic, std::mt19937_64& rng) {
  if (num_train_timesteps < 1) throw ConfigError("sample_timesteps needs T >= 1");
  std::uniform_real_distribution<double> dist(0.0, static_cast<double>(num_train_timesteps));
  std::vector<std::int64_t> out(batch);
  for (auto& t : out) {
    const double u = dist(rng);
    t = cubic ? cubic_timestep(u, num_train_timesteps) : uniform_timestep(u, num_train_timesteps);
  }
  return torch::tensor(out, torch::kInt64);
}

torch::Tensor noise_mse(const torch::Tensor& eps_pred, const torch::Tensor& eps) {
  check_same_shape(eps_pred, eps, "noise_mse");
  return (eps_pred - eps).pow(2).mean();
}

torch::Tensor predict_clean(const torch::Tensor& z_t, const torch::Tensor& eps_pred, double alpha_bar) {
  check_same_shape(z_t, eps_pred, "predict_clean");
  if (!(alpha_bar > 0.0)) throw DomainError("predict_clean needs alpha_bar > 0");
  return (z_t - std::sqrt(1.0 - alpha_bar) * eps_pred) / std::sqrt(alpha_bar);
}

torch::Tensor clamp_clean_estimate(const torch::Tensor& z_t, const torch::Tensor& eps_pred, double alpha_bar,
                                   double bound) {
  if (!(bound > 0.0)) throw DomainError("clean-estimate bound must be positive");
  if (!(alpha_bar < 1.0)) return eps_pred;
  const torch::Tensor x0 = predict_clean(z_t, eps_pred, alpha_bar).clamp(-bound, bound);
  return (z_t - std::sqrt(alpha_bar) * x0) / std::sqrt(1.0 - alpha_bar);
}

torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, double alpha_bar_t,
                        double alpha_bar_next) {
  const torch::Tensor x0 = predict_clean(z_t, eps_pred, alpha_bar_t);
  return std::sqrt(alpha_bar_next) * x0 + std::sqrt(1.0 - alpha_bar_next) * eps_pred;
}

torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, int t, int t_next,
                        const NoiseSchedule& schedule) {
  if (t_next >= t) {
    throw OrderingError("ddim_step needs t > t_next (got t=" + std::to_string(t) + ", t_next=" +
                        std::to_string(t_next) + ")");
  }
  return ddim_step(z_t, eps_pred, schedule.alpha_bar(t), schedule.alpha_bar(t_next));
}

torch::Tensor cfg_combine(const torch::Tensor& eps_uncond, const torch::Tensor& eps_cond, double weight) {
  check_same_shape(eps_uncond, eps_cond, "cfg_combine");
  return eps_uncond + weight * (eps_cond - eps_uncond);
}

}  // namespace segdiff
