#include "scenediff/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace scenediff {

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  s.sigma.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double b = (T == 1) ? beta_start
                              : beta_start + (beta_end - beta_start) * i / (T - 1);
    s.beta[i] = b;
    s.alpha[i] = 1.0 - b;
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.sigma[i] = std::sqrt(b);
  }
  return s;
}

namespace {
void check_inputs(const Scene& scene, int t, const std::vector<Vec3>& eps,
                  const NoiseSchedule& sched, const char* who) {
  if (t < 1 || t > sched.T) throw std::invalid_argument(std::string(who) + ": t out of range");
  if (eps.size() != scene.points.size())
    throw std::invalid_argument(std::string(who) + ": noise shape mismatch");
}
}  // namespace

NoisySample diffuse_standard(const Scene& x0, int t, const std::vector<Vec3>& eps,
                             const NoiseSchedule& sched) {
  check_inputs(x0, t, eps, sched, "diffuse_standard");
  const double a = std::sqrt(sched.alpha_bar_at(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
  NoisySample out;
  out.t = t;
  out.noise = eps;
  out.points.resize(x0.points.size());
  for (std::size_t i = 0; i < x0.points.size(); ++i)
    out.points[i] = a * x0.points[i] + b * eps[i];
  return out;
}

NoisySample diffuse_offset(const Scene& scene, int t, const std::vector<Vec3>& eps,
                           const NoiseSchedule& sched) {
  check_inputs(scene, t, eps, sched, "diffuse_offset");
  const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
  NoisySample out;
  out.t = t;
  out.noise = eps;
  out.points.resize(scene.points.size());
  for (std::size_t i = 0; i < scene.points.size(); ++i)
    out.points[i] = scene.points[i] + b * eps[i];
  return out;
}

Scene pseudo_dense(const Scene& scan, int k_dup) {
  if (k_dup < 1) throw std::invalid_argument("pseudo_dense: k_dup must be >= 1");
  Scene out;
  out.role = SceneRole::Noisy;
  const int n = scan.size();
  out.points.reserve(static_cast<std::size_t>(n) * k_dup);
  for (int i = 0; i < k_dup; ++i)
    for (int j = 0; j < n; ++j) out.points.push_back(scan.points[j]);
  return out;
}

}  // namespace scenediff
