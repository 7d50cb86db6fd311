#pragma once

#include <vector>

#include "scenediff/geometry.hpp"

namespace scenediff {

/// Per-timestep noise factors for t in [1, T]. Buffers are indexed t-1.
/// sigma[t]^2 == beta[t].
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product of alpha
  std::vector<double> sigma;

  double beta_at(int t) const { return beta[t - 1]; }
  double alpha_at(int t) const { return alpha[t - 1]; }
  double alpha_bar_at(int t) const { return alpha_bar[t - 1]; }
  double sigma_at(int t) const { return sigma[t - 1]; }
};

struct NoisySample {
  std::vector<Vec3> points;
  int t = 0;
  std::vector<Vec3> noise;  // the draw used, kept for loss computation
};

/// Linearly spaced beta in [beta_start, beta_end].
NoiseSchedule build_schedule(int T, double beta_start, double beta_end);

/// x^t = sqrt(abar^t) x^0 + sqrt(1 - abar^t) eps
NoisySample diffuse_standard(const Scene& x0, int t, const std::vector<Vec3>& eps,
                             const NoiseSchedule& sched);

/// p^t = p + sqrt(1 - abar^t) eps; the point itself is never rescaled.
NoisySample diffuse_offset(const Scene& scene, int t, const std::vector<Vec3>& eps,
                           const NoiseSchedule& sched);

/// Duplicates the scan k_dup times: output point i*N + j equals scan point j.
Scene pseudo_dense(const Scene& scan, int k_dup);

}  // namespace scenediff
