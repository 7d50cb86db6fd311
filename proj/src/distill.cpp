#include "scenediff/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace scenediff {

int DistillConfig::effective_t_min(int T) const {
  if (t_min > 0) return t_min;
  return std::max(1, static_cast<int>(std::ceil(0.02 * T)));
}

int DistillConfig::effective_t_max(int T) const {
  if (t_max > 0) return t_max;
  return std::max(effective_t_min(T), static_cast<int>(std::floor(0.98 * T)));
}

double scene_loss(const Scene& completion, const Scene& gt) {
  if (completion.size() < 1 || gt.size() < 1)
    throw std::invalid_argument("scene_loss: empty scene");
  double s = 0.0;
  for (const Vec3& p : completion.points) {
    double best = norm2(p - gt.points[0]);
    for (int j = 1; j < gt.size(); ++j) best = std::min(best, norm2(p - gt.points[j]));
    s += best;
  }
  return s / completion.size();
}

double point_loss(const DistanceMatrix& gt_matrix, const DistanceMatrix& completion_matrix) {
  if (gt_matrix.n != completion_matrix.n)
    throw std::invalid_argument("point_loss: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < gt_matrix.d.size(); ++i) {
    const double d = gt_matrix.d[i] - completion_matrix.d[i];
    s += d * d;
  }
  return s;
}

namespace {

int clamped_knn(const DistillConfig& cfg, const Scene& scene) {
  return std::min(cfg.k_nn, scene.size() - 1);
}

struct SceneKeypoints {
  KeypointSet keys;
  DistanceMatrix gt_matrix;
};

SceneKeypoints gt_keypoints(const Scene& gt, const DistillConfig& cfg, std::uint64_t seed) {
  SceneKeypoints out;
  out.keys = select_keypoints_method(gt, cfg.keypoint_fraction, clamped_knn(cfg, gt),
                                     cfg.prefilter_fraction, seed, cfg.keypoint_method);
  out.gt_matrix = distance_matrix(gt, out.keys);
  return out;
}

std::vector<Vec3> node_points(const ad::Graph& g, int node) {
  const auto& v = g.value(node);
  std::vector<Vec3> pts(v.size() / 3);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return pts;
}

/// One-step generation with gradient recording: returns the G0 node.
int generate_onestep_graph(ad::Graph& g, const DenoiserModel& student,
                           const ModelBinding& binding, const Scene& scan,
                           const NoiseSchedule& sched, const DistillConfig& cfg, Rng& rng) {
  const Scene dense = pseudo_dense(scan, cfg.k_dup);
  const std::vector<Vec3> eps = draw_noise(rng, dense.points.size());
  const std::vector<Vec3> noisy = diffuse_offset(dense, sched.T, eps, sched).points;
  const ConditionEncoding cond =
      encode_condition(scan, noisy, student.desc.cond_neighbors);
  const int noisy_node = g.constant(static_cast<int>(noisy.size()), 3,
                                    reinterpret_cast<const double*>(noisy.data()));
  const int pred = forward_graph(g, student, binding, noisy_node, cond, sched.T);
  const int t = sched.T;
  if (cfg.offset_consistent_inversion) {
    const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
    return g.add(noisy_node, g.scale(pred, -b));
  }
  const double a = 1.0 / std::sqrt(sched.alpha_at(t));
  const double b = (1.0 - sched.alpha_at(t)) / std::sqrt(1.0 - sched.alpha_bar_at(t));
  return g.add(g.scale(noisy_node, a), g.scale(pred, -a * b));
}

}  // namespace

double structural_loss(const Scene& completion, const Scene& gt, const DistillConfig& cfg) {
  if (cfg.lambda_scene < 0.0 || cfg.lambda_point < 0.0)
    throw std::invalid_argument("structural_loss: negative weights");
  double total = 0.0;
  if (cfg.lambda_scene > 0.0) total += cfg.lambda_scene * scene_loss(completion, gt);
  if (cfg.lambda_point > 0.0) {
    const SceneKeypoints sk = gt_keypoints(gt, cfg, cfg.seed);
    const KeypointSet corr = correspond_keypoints(sk.keys, gt, completion);
    total += cfg.lambda_point * point_loss(sk.gt_matrix, distance_matrix(completion, corr));
  }
  return total;
}

KlSurrogate kl_surrogate_loss(ad::Graph& g, int g0_node, const DenoiserModel& teacher,
                              const DenoiserModel& aux, const Scene& scan, int t,
                              const std::vector<Vec3>& eps, const NoiseSchedule& sched) {
  const int rows = g.node(g0_node).rows;
  if (static_cast<int>(eps.size()) != rows)
    throw std::invalid_argument("kl_surrogate_loss: noise shape mismatch");
  const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
  std::vector<double> shift(static_cast<std::size_t>(rows) * 3);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < 3; ++c) shift[static_cast<std::size_t>(i) * 3 + c] = b * eps[i][c];
  const int gt_node = g.add(g0_node, g.constant(rows, 3, shift.data()));

  const std::vector<Vec3> gt_pts = node_points(g, gt_node);
  const ConditionEncoding cond = encode_condition(scan, gt_pts, teacher.desc.cond_neighbors);
  const std::vector<Vec3> e_teacher = forward_eval(teacher, gt_pts, cond, t);
  const std::vector<Vec3> e_aux = forward_eval(aux, gt_pts, cond, t);
  for (const auto& v : e_teacher)
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2]))
      throw TrainingError("kl_surrogate_loss: non-finite teacher output");

  std::vector<double> d(static_cast<std::size_t>(rows) * 3);
  double sq = 0.0;
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < 3; ++c) {
      const double diff = e_teacher[i][c] - e_aux[i][c];
      d[static_cast<std::size_t>(i) * 3 + c] = diff;
      sq += diff * diff;
    }

  KlSurrogate out;
  out.loss_node = g.dot_sum(gt_node, g.constant(rows, 3, d.data()));
  out.l_kl = sq / (static_cast<double>(rows) * 3.0);
  return out;
}

double auxiliary_step(DenoiserModel& aux, const Scene& completion, const Scene& scan,
                      const NoiseSchedule& sched, double lr, Rng& rng) {
  const int t = rng.uniform_int(1, sched.T);
  const std::vector<Vec3> eps = draw_noise(rng, completion.points.size());
  const NoisySample noisy = diffuse_offset(completion, t, eps, sched);
  const ConditionEncoding cond =
      encode_condition(scan, noisy.points, aux.desc.cond_neighbors);

  ad::Graph g;
  const ModelBinding binding = bind_model(g, aux, true);
  const int pts = g.constant(static_cast<int>(noisy.points.size()), 3,
                             reinterpret_cast<const double*>(noisy.points.data()));
  const int pred = forward_graph(g, aux, binding, pts, cond, t);
  const int target = g.constant(static_cast<int>(eps.size()), 3,
                                reinterpret_cast<const double*>(eps.data()));
  const int loss = g.mean_sq_diff(pred, target);
  const double loss_val = g.scalar(loss);
  if (!std::isfinite(loss_val)) throw TrainingError("auxiliary_step: non-finite loss");
  g.backward(loss);
  collect_gradients(g, binding, aux);
  sgd_step(aux, lr);
  return loss_val;
}

DistillResult distill(const DenoiserModel& teacher,
                      const std::vector<std::pair<Scene, Scene>>& dataset,
                      const NoiseSchedule& sched, const DistillConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("distill: empty dataset");
  if (cfg.lambda_scene < 0.0 || cfg.lambda_point < 0.0)
    throw std::invalid_argument("distill: negative loss weights");
  if (cfg.student_steps_per_iter < 1 || cfg.aux_steps_per_iter < 1)
    throw std::invalid_argument("distill: alternation ratio components must be >= 1");
  if (cfg.iterations < 0) throw std::invalid_argument("distill: negative iteration count");
  if (cfg.t_min > 0 && (cfg.t_min > sched.T || (cfg.t_max > 0 && cfg.t_max < cfg.t_min)))
    throw std::invalid_argument("distill: bad timestep range");
  const std::uint64_t theta_sum = teacher.checksum();

  DistillResult res{teacher.clone(ModelRole::Student), teacher.clone(ModelRole::Auxiliary), {}};
  const int t_lo = cfg.effective_t_min(sched.T);
  const int t_hi = cfg.effective_t_max(sched.T);

  std::vector<SceneKeypoints> keypoints;  // selected once per scene on static ground truth
  keypoints.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    keypoints.push_back(gt_keypoints(dataset[i].second, cfg, cfg.seed + i));

  std::ofstream log;
  if (!cfg.loss_log_path.empty()) {
    log.open(cfg.loss_log_path);
    if (!log) throw std::runtime_error("distill: cannot open loss log " + cfg.loss_log_path);
  }

  Rng rng(cfg.seed ^ 0xa0761d6478bd642full);
  DenoiserModel last_good = res.student.clone(ModelRole::Student);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const std::size_t si = iter % dataset.size();
    const Scene& scan = dataset[si].first;
    const Scene& gt = dataset[si].second;
    const SceneKeypoints& sk = keypoints[si];

    DistillIterationRecord rec;
    rec.iteration = iter;
    Scene completion;
    completion.role = SceneRole::Completion;

    try {
    for (int s = 0; s < cfg.student_steps_per_iter; ++s) {
      ad::Graph g;
      const ModelBinding binding = bind_model(g, res.student, true);
      const int g0 = generate_onestep_graph(g, res.student, binding, scan, sched, cfg, rng);

      const int t_kl = rng.uniform_int(t_lo, t_hi);
      const std::vector<Vec3> eps_kl = draw_noise(rng, g.node(g0).rows);
      const KlSurrogate kl =
          kl_surrogate_loss(g, g0, teacher, res.auxiliary, scan, t_kl, eps_kl, sched);

      const int scene_node = g.nearest_sq_mean(g0, gt.points);

      completion.points = node_points(g, g0);
      const KeypointSet corr = correspond_keypoints(sk.keys, gt, completion);
      const int gathered = g.gather_rows(g0, corr.indices);
      const int pd = g.pairwise_distance(gathered);
      const int d_const = g.constant(sk.gt_matrix.n, sk.gt_matrix.n, sk.gt_matrix.d.data());
      const int point_node = g.sum_sq_diff(pd, d_const);

      const int total = g.combine({{kl.loss_node, 1.0},
                                   {scene_node, cfg.lambda_scene},
                                   {point_node, cfg.lambda_point}});
      rec.l_kl = kl.l_kl;
      rec.l_scene = g.scalar(scene_node);
      rec.l_point = g.scalar(point_node);
      if (!std::isfinite(rec.l_scene) || !std::isfinite(rec.l_point))
        throw TrainingError("distill: non-finite structural loss at iteration " +
                            std::to_string(iter));
      g.backward(total);
      collect_gradients(g, binding, res.student);
      sgd_step(res.student, cfg.lr_student);
    }

    for (int a = 0; a < cfg.aux_steps_per_iter; ++a)
      rec.l_phi = auxiliary_step(res.auxiliary, completion, scan, sched, cfg.lr_aux, rng);
    } catch (const std::runtime_error&) {
      // divergence: keep a last-good student checkpoint next to the loss log
      if (!cfg.loss_log_path.empty()) last_good.save(cfg.loss_log_path + ".lastgood.ckpt");
      throw;
    }
    last_good = res.student.clone(ModelRole::Student);

    if (teacher.checksum() != theta_sum)
      throw std::logic_error("distill: teacher parameters changed");
    res.history.push_back(rec);
    if (log.is_open())
      log << "{\"iteration\":" << rec.iteration << ",\"l_kl\":" << rec.l_kl
          << ",\"l_scene\":" << rec.l_scene << ",\"l_point\":" << rec.l_point
          << ",\"l_phi\":" << rec.l_phi << "}\n";
  }
  return res;
}

}  // namespace scenediff
