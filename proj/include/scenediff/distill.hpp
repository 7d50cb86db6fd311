#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scenediff/diffusion.hpp"

namespace scenediff {

struct DistillConfig {
  double lambda_scene = 0.5;
  double lambda_point = 0.01;
  /// Keypoints kept from the prefiltered candidates (1/10 of the scene drawn,
  /// top 1/3 by curvature -> 1/30 of the scene overall).
  double keypoint_fraction = 1.0 / 3.0;
  double prefilter_fraction = 0.1;
  KeypointMethod keypoint_method = KeypointMethod::Curvature;
  int k_nn = 180;
  int k_dup = 10;
  /// Timestep range for the KL expectation; defaults derived from T when 0.
  int t_min = 0;
  int t_max = 0;
  int student_steps_per_iter = 1;
  int aux_steps_per_iter = 1;
  double lr_student = 3e-5;
  double lr_aux = 3e-5;
  int iterations = 500;
  std::uint64_t seed = 0;
  bool offset_consistent_inversion = false;
  std::string loss_log_path;  // JSON lines, one record per iteration; empty = no log

  int effective_t_min(int T) const;
  int effective_t_max(int T) const;
};

struct DistillIterationRecord {
  int iteration = 0;
  double l_kl = 0.0;     // mean ||eps_theta - eps_phi||^2 estimate
  double l_scene = 0.0;
  double l_point = 0.0;
  double l_phi = 0.0;    // auxiliary denoising loss
};

struct DistillResult {
  DenoiserModel student;
  DenoiserModel auxiliary;
  std::vector<DistillIterationRecord> history;
};

/// Mean over completion points of the squared distance to the nearest
/// ground-truth point (one-sided).
double scene_loss(const Scene& completion, const Scene& gt);

/// Squared Frobenius norm of the difference of two keypoint distance matrices.
double point_loss(const DistanceMatrix& gt_matrix, const DistanceMatrix& completion_matrix);

/// lambda_scene * scene + lambda_point * point, keypoints selected on the
/// ground truth and corresponded into the completion.
double structural_loss(const Scene& completion, const Scene& gt, const DistillConfig& cfg);

struct KlSurrogate {
  int loss_node = -1;
  double l_kl = 0.0;  // mean ||eps_theta - eps_phi||^2 over coordinates
};

/// Builds the score-distillation surrogate <stop_grad(eps_theta - eps_phi), G^t>
/// on the graph, so backward() delivers exactly the bidirectional gradient to
/// whatever produced g0_node.
KlSurrogate kl_surrogate_loss(ad::Graph& g, int g0_node, const DenoiserModel& teacher,
                              const DenoiserModel& aux, const Scene& scan, int t,
                              const std::vector<Vec3>& eps, const NoiseSchedule& sched);

/// One denoising-loss SGD step on the auxiliary model, treating the detached
/// completion as data. Returns the loss value.
double auxiliary_step(DenoiserModel& aux, const Scene& completion, const Scene& scan,
                      const NoiseSchedule& sched, double lr, Rng& rng);

/// The alternating student/auxiliary optimization. The teacher is never
/// modified (checksum asserted every iteration).
DistillResult distill(const DenoiserModel& teacher,
                      const std::vector<std::pair<Scene, Scene>>& dataset,
                      const NoiseSchedule& sched, const DistillConfig& cfg);

}  // namespace scenediff
