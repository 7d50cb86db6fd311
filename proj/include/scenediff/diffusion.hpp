#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "scenediff/net.hpp"
#include "scenediff/rng.hpp"
#include "scenediff/schedule.hpp"

namespace scenediff {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  int steps = 8;
  std::vector<int> timesteps;  // descending; [T] when steps == 1
  bool stochastic = false;
  /// Alternate inversion G0 = Gt - sqrt(1-abar) eps_hat instead of the
  /// rescaling form; off by default.
  bool offset_consistent_inversion = false;
  int k_dup = 10;

  /// Evenly spaced timesteps from T down to 1 (just {T} for steps == 1).
  static SamplerConfig even(int steps, int T, int k_dup);
};

/// One denoising-loss SGD pass per (P, G) pair per epoch, batch size 1.
/// Ground-truth scenes are noised with the point-offset scheme.
DenoiserModel train_teacher(const std::vector<std::pair<Scene, Scene>>& dataset, int epochs,
                            const NoiseSchedule& sched, const NetDescriptor& desc, double lr,
                            std::uint64_t seed, std::vector<double>* loss_history = nullptr);

/// Mean over points and coordinates of (eps - eps_hat)^2.
double denoising_loss_eval(const DenoiserModel& model, const Scene& gt, const Scene& scan,
                           int t, const std::vector<Vec3>& eps, const NoiseSchedule& sched);

/// Monte-Carlo estimate of the denoising loss over `draws` (t, eps) samples.
double denoising_loss_estimate(const DenoiserModel& model,
                               const std::vector<std::pair<Scene, Scene>>& dataset,
                               const NoiseSchedule& sched, int draws, std::uint64_t seed);

/// G^{t-1} = (1/sqrt(alpha^t)) (G^t - ((1-alpha^t)/sqrt(1-abar^t)) eps_hat) + sigma^t z
std::vector<Vec3> reverse_step(const DenoiserModel& model, const std::vector<Vec3>& noisy,
                               const Scene& scan, int t, const NoiseSchedule& sched,
                               bool stochastic, const std::vector<Vec3>& z);

/// Pseudo-dense init at T, then reverse steps over cfg.timesteps.
Scene sample_multistep(const DenoiserModel& model, const Scene& scan, const NoiseSchedule& sched,
                       const SamplerConfig& cfg, std::uint64_t seed);

/// Single forward pass at t = T plus one inversion; the student's generation
/// path inside the distillation loop. Bitwise equal to sample_multistep with
/// steps == 1.
Scene sample_onestep(const DenoiserModel& model, const Scene& scan, const NoiseSchedule& sched,
                     int k_dup, std::uint64_t seed, bool offset_consistent_inversion = false);

/// Few-step student sampling: one-step prediction at each subsequence
/// timestep, re-noised to the next timestep with the offset scheme using the
/// predicted noise, so successive rounds refine one deterministic trajectory.
Scene sample_fewstep(const DenoiserModel& model, const Scene& scan, const NoiseSchedule& sched,
                     const SamplerConfig& cfg, std::uint64_t seed);

std::vector<Vec3> draw_noise(Rng& rng, std::size_t n);

}  // namespace scenediff
