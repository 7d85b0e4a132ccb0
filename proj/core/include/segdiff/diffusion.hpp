#pragma once

#include <cstdint>
#include <random>

#include <torch/torch.h>

#include "segdiff/schedule.hpp"

namespace segdiff {

/// sqrt(ab) * z0 + sqrt(1 - ab) * eps.
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, double alpha_bar);
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, int t, const NoiseSchedule& schedule);
/// Per-sample timesteps: `timesteps` is an int64 [B] tensor, z0/eps are [B, ...].
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, const torch::Tensor& timesteps,
                        const NoiseSchedule& schedule);

/// Maps a draw u in [0, T] to clamp(floor(T * (1 - (u/T)^3)), 0, T-1).
int cubic_timestep(double u, int num_train_timesteps);
/// floor(u) clamped to [0, T-1].
int uniform_timestep(double u, int num_train_timesteps);

/// Training timesteps as an int64 [batch] tensor; u ~ U(0, T).
torch::Tensor sample_timesteps(int batch, int num_train_timesteps, bool cubic, std::mt19937_64& rng);

/// Mean squared error.
torch::Tensor noise_mse(const torch::Tensor& eps_pred, const torch::Tensor& eps);

/// Clean-sample estimate (z_t - sqrt(1-ab) * eps) / sqrt(ab).
torch::Tensor predict_clean(const torch::Tensor& z_t, const torch::Tensor& eps_pred, double alpha_bar);

/// Noise prediction consistent with the clean estimate clamped to [-bound, bound].
torch::Tensor clamp_clean_estimate(const torch::Tensor& z_t, const torch::Tensor& eps_pred, double alpha_bar,
                                   double bound);

/// Deterministic (eta = 0) DDIM update between two cumulative alphas.
torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, double alpha_bar_t,
                        double alpha_bar_next);
/// Schedule form; `t_next` may be kCleanTimestep. Throws OrderingError unless t > t_next.
torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, int t, int t_next,
                        const NoiseSchedule& schedule);

/// Classifier-free guidance: uncond + w * (cond - uncond).
torch::Tensor cfg_combine(const torch::Tensor& eps_uncond, const torch::Tensor& eps_cond, double weight = 3.0);

}  // namespace segdiff
