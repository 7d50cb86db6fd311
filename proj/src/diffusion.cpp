#include "scenediff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "scenediff/rng.hpp"

namespace scenediff {

std::vector<Vec3> draw_noise(Rng& rng, std::size_t n) {
  std::vector<Vec3> eps(n);
  for (auto& e : eps) {
    e[0] = rng.normal();
    e[1] = rng.normal();
    e[2] = rng.normal();
  }
  return eps;
}

SamplerConfig SamplerConfig::even(int steps, int T, int k_dup) {
  if (steps < 1) throw std::invalid_argument("SamplerConfig: steps must be >= 1");
  SamplerConfig cfg;
  cfg.steps = steps;
  cfg.k_dup = k_dup;
  if (steps == 1) {
    cfg.timesteps = {T};
  } else {
    cfg.timesteps.reserve(steps);
    int prev = T + 1;
    for (int i = 0; i < steps; ++i) {
      int t = static_cast<int>(std::lround(T - static_cast<double>(i) * (T - 1) / (steps - 1)));
      if (t >= prev) t = prev - 1;  // keep strictly descending
      if (t < 1) t = 1;
      cfg.timesteps.push_back(t);
      prev = t;
    }
    cfg.timesteps.back() = 1;
  }
  return cfg;
}

double denoising_loss_eval(const DenoiserModel& model, const Scene& gt, const Scene& scan,
                           int t, const std::vector<Vec3>& eps, const NoiseSchedule& sched) {
  const NoisySample noisy = diffuse_offset(gt, t, eps, sched);
  const ConditionEncoding cond =
      encode_condition(scan, noisy.points, model.desc.cond_neighbors);
  const std::vector<Vec3> pred = forward_eval(model, noisy.points, cond, t);
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) s += norm2(pred[i] - eps[i]);
  return s / (3.0 * eps.size());
}

double denoising_loss_estimate(const DenoiserModel& model,
                               const std::vector<std::pair<Scene, Scene>>& dataset,
                               const NoiseSchedule& sched, int draws, std::uint64_t seed) {
  Rng rng(seed);
  double s = 0.0;
  for (int d = 0; d < draws; ++d) {
    const auto& [scan, gt] = dataset[d % dataset.size()];
    const int t = rng.uniform_int(1, sched.T);
    const std::vector<Vec3> eps = draw_noise(rng, gt.points.size());
    s += denoising_loss_eval(model, gt, scan, t, eps, sched);
  }
  return s / draws;
}

DenoiserModel train_teacher(const std::vector<std::pair<Scene, Scene>>& dataset, int epochs,
                            const NoiseSchedule& sched, const NetDescriptor& desc, double lr,
                            std::uint64_t seed, std::vector<double>* loss_history) {
  if (dataset.empty()) throw std::invalid_argument("train_teacher: empty dataset");
  DenoiserModel model = DenoiserModel::init(desc, ModelRole::Teacher, seed);
  Rng rng(seed ^ 0xd1b54a32d192ed03ull);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (const auto& [scan, gt] : dataset) {
      const int t = rng.uniform_int(1, sched.T);
      const std::vector<Vec3> eps = draw_noise(rng, gt.points.size());
      const NoisySample noisy = diffuse_offset(gt, t, eps, sched);
      const ConditionEncoding cond =
          encode_condition(scan, noisy.points, desc.cond_neighbors);

      ad::Graph g;
      const ModelBinding binding = bind_model(g, model, true);
      const int pts = g.constant(static_cast<int>(noisy.points.size()), 3,
                                 reinterpret_cast<const double*>(noisy.points.data()));
      const int pred = forward_graph(g, model, binding, pts, cond, t);
      const int target = g.constant(static_cast<int>(eps.size()), 3,
                                    reinterpret_cast<const double*>(eps.data()));
      const int loss = g.mean_sq_diff(pred, target);
      const double loss_val = g.scalar(loss);
      if (!std::isfinite(loss_val))
        throw TrainingError("train_teacher: non-finite loss at epoch " + std::to_string(epoch));
      g.backward(loss);
      collect_gradients(g, binding, model);
      sgd_step(model, lr);
      if (loss_history) loss_history->push_back(loss_val);
    }
  }
  return model;
}

std::vector<Vec3> reverse_step(const DenoiserModel& model, const std::vector<Vec3>& noisy,
                               const Scene& scan, int t, const NoiseSchedule& sched,
                               bool stochastic, const std::vector<Vec3>& z) {
  if (t < 1 || t > sched.T) throw std::invalid_argument("reverse_step: t out of range");
  const ConditionEncoding cond = encode_condition(scan, noisy, model.desc.cond_neighbors);
  const std::vector<Vec3> pred = forward_eval(model, noisy, cond, t);
  const double a = 1.0 / std::sqrt(sched.alpha_at(t));
  const double b = (1.0 - sched.alpha_at(t)) / std::sqrt(1.0 - sched.alpha_bar_at(t));
  const double sig = sched.sigma_at(t);
  std::vector<Vec3> out(noisy.size());
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    out[i] = a * (noisy[i] - b * pred[i]);
    if (stochastic) out[i] = out[i] + sig * z[i];
  }
  return out;
}

namespace {

std::vector<Vec3> init_noisy_dense(const DenoiserModel&, const Scene& scan,
                                   const NoiseSchedule& sched, int k_dup, Rng& rng) {
  const Scene dense = pseudo_dense(scan, k_dup);
  const std::vector<Vec3> eps = draw_noise(rng, dense.points.size());
  return diffuse_offset(dense, sched.T, eps, sched).points;
}

std::vector<Vec3> predict_clean(const DenoiserModel& model, const std::vector<Vec3>& noisy,
                                const Scene& scan, int t, const NoiseSchedule& sched,
                                bool offset_consistent) {
  if (!offset_consistent) return reverse_step(model, noisy, scan, t, sched, false, {});
  const ConditionEncoding cond = encode_condition(scan, noisy, model.desc.cond_neighbors);
  const std::vector<Vec3> pred = forward_eval(model, noisy, cond, t);
  const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
  std::vector<Vec3> out(noisy.size());
  for (std::size_t i = 0; i < noisy.size(); ++i) out[i] = noisy[i] - b * pred[i];
  return out;
}

}  // namespace

Scene sample_multistep(const DenoiserModel& model, const Scene& scan, const NoiseSchedule& sched,
                       const SamplerConfig& cfg, std::uint64_t seed) {
  if (cfg.timesteps.empty() || static_cast<int>(cfg.timesteps.size()) != cfg.steps)
    throw std::invalid_argument("sample_multistep: invalid timestep subsequence");
  Rng rng(seed);
  std::vector<Vec3> g = init_noisy_dense(model, scan, sched, cfg.k_dup, rng);
  for (int t : cfg.timesteps) {
    std::vector<Vec3> z;
    if (cfg.stochastic && t > 1) z = draw_noise(rng, g.size());
    g = reverse_step(model, g, scan, t, sched, cfg.stochastic && t > 1, z);
  }
  Scene out;
  out.role = SceneRole::Completion;
  out.points = std::move(g);
  return out;
}

Scene sample_onestep(const DenoiserModel& model, const Scene& scan, const NoiseSchedule& sched,
                     int k_dup, std::uint64_t seed, bool offset_consistent_inversion) {
  Rng rng(seed);
  std::vector<Vec3> g = init_noisy_dense(model, scan, sched, k_dup, rng);
  Scene out;
  out.role = SceneRole::Completion;
  out.points = predict_clean(model, g, scan, sched.T, sched, offset_consistent_inversion);
  return out;
}

Scene sample_fewstep(const DenoiserModel& model, const Scene& scan, const NoiseSchedule& sched,
                     const SamplerConfig& cfg, std::uint64_t seed) {
  if (cfg.timesteps.empty() || static_cast<int>(cfg.timesteps.size()) != cfg.steps)
    throw std::invalid_argument("sample_fewstep: invalid timestep subsequence");
  Rng rng(seed);
  std::vector<Vec3> g = init_noisy_dense(model, scan, sched, cfg.k_dup, rng);
  std::vector<Vec3> clean;
  for (std::size_t i = 0; i < cfg.timesteps.size(); ++i) {
    const int t = cfg.timesteps[i];
    const ConditionEncoding cond = encode_condition(scan, g, model.desc.cond_neighbors);
    const std::vector<Vec3> pred = forward_eval(model, g, cond, t);
    clean.resize(g.size());
    if (cfg.offset_consistent_inversion) {
      const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
      for (std::size_t j = 0; j < g.size(); ++j) clean[j] = g[j] - b * pred[j];
    } else {
      const double a = 1.0 / std::sqrt(sched.alpha_at(t));
      const double b = (1.0 - sched.alpha_at(t)) / std::sqrt(1.0 - sched.alpha_bar_at(t));
      for (std::size_t j = 0; j < g.size(); ++j) clean[j] = a * (g[j] - b * pred[j]);
    }
    if (i + 1 < cfg.timesteps.size()) {
      // re-noise with the noise just predicted, not a fresh draw: the next
      // round then refines the same trajectory instead of resampling it
      const int t_next = cfg.timesteps[i + 1];
      const double b = std::sqrt(1.0 - sched.alpha_bar_at(t_next));
      for (std::size_t j = 0; j < clean.size(); ++j) g[j] = clean[j] + b * pred[j];
    }
  }
  Scene out;
  out.role = SceneRole::Completion;
  out.points = std::move(clean);
  return out;
}

}  // namespace scenediff
