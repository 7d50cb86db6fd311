#include "scenediff/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "scenediff/rng.hpp"

namespace scenediff {

int nearest_point(const Scene& scene, const Vec3& q) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < scene.size(); ++i) {
    const double d = norm2(scene.points[i] - q);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::vector<int> knn(const Scene& scene, int query, int k_nn) {
  const int n = scene.size();
  if (query < 0 || query >= n) throw std::invalid_argument("knn: query index out of range");
  if (k_nn < 1 || k_nn > n - 1) throw std::invalid_argument("knn: k_nn out of range");

  std::vector<std::pair<double, int>> by_dist;
  by_dist.reserve(n - 1);
  const Vec3& q = scene.points[query];
  for (int i = 0; i < n; ++i) {
    if (i == query) continue;
    by_dist.emplace_back(norm2(scene.points[i] - q), i);
  }
  std::partial_sort(by_dist.begin(), by_dist.begin() + k_nn, by_dist.end());
  std::vector<int> out(k_nn);
  for (int i = 0; i < k_nn; ++i) out[i] = by_dist[i].second;
  return out;
}

std::array<double, 3> symmetric_eigenvalues(const std::array<double, 9>& m) {
  const double a00 = m[0], a01 = m[1], a02 = m[2];
  const double a11 = m[4], a12 = m[5], a22 = m[8];

  std::array<double, 3> eig;
  const double p1 = a01 * a01 + a02 * a02 + a12 * a12;
  if (p1 == 0.0) {
    eig = {a00, a11, a22};
  } else {
    const double q = (a00 + a11 + a22) / 3.0;
    const double p2 = (a00 - q) * (a00 - q) + (a11 - q) * (a11 - q) + (a22 - q) * (a22 - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    // B = (A - qI) / p
    const double b00 = (a00 - q) / p, b11 = (a11 - q) / p, b22 = (a22 - q) / p;
    const double b01 = a01 / p, b02 = a02 / p, b12 = a12 / p;
    double detb = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) +
                  b02 * (b01 * b12 - b11 * b02);
    double r = detb / 2.0;
    r = std::clamp(r, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double two_pi_3 = 2.0943951023931954923;
    const double e1 = q + 2.0 * p * std::cos(phi);
    const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * two_pi_3);
    eig = {e3, 3.0 * q - e1 - e3, e1};
  }
  std::sort(eig.begin(), eig.end());
  return eig;
}

Neighborhood neighborhood_stats(const Scene& scene, int center, int k_nn) {
  Neighborhood nb;
  nb.center = center;
  nb.members = knn(scene, center, k_nn);

  Vec3 c{0.0, 0.0, 0.0};
  for (int idx : nb.members) c = c + scene.points[idx];
  const double inv_k = 1.0 / static_cast<double>(k_nn);
  nb.centroid = inv_k * c;

  std::array<double, 9> cov{};
  for (int idx : nb.members) {
    const Vec3 d = scene.points[idx] - nb.centroid;
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) cov[r * 3 + col] += d[r] * d[col];
  }
  for (double& v : cov) v *= inv_k;
  nb.covariance = cov;

  auto eig = symmetric_eigenvalues(cov);
  for (double& v : eig)
    if (v < 1e-12) v = 0.0;  // round-off guard; keeps curvature nonnegative
  nb.eigenvalues = eig;
  return nb;
}

double curvature(const Neighborhood& nb) {
  const double sum = nb.eigenvalues[0] + nb.eigenvalues[1] + nb.eigenvalues[2];
  if (sum <= 0.0) return 0.0;  // degenerate: all neighbors coincide
  return nb.eigenvalues[0] / sum;
}

namespace {

std::vector<int> prefilter_candidates(const Scene& scene, double prefilter_fraction,
                                      std::uint64_t seed) {
  const int n = scene.size();
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (prefilter_fraction >= 1.0) return all;
  int m = static_cast<int>(std::floor(prefilter_fraction * n));
  if (m < 1) m = 1;
  // partial Fisher-Yates, then restore index order
  Rng rng(seed);
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.uniform() * (n - i));
    std::swap(all[i], all[j]);
  }
  all.resize(m);
  std::sort(all.begin(), all.end());
  return all;
}

int keypoint_count(double fraction, int candidate_count) {
  return std::max(3, static_cast<int>(std::floor(fraction * candidate_count)));
}

}  // namespace

KeypointSet select_keypoints(const Scene& scene, double fraction, int k_nn,
                             double prefilter_fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0 || prefilter_fraction <= 0.0 || prefilter_fraction > 1.0)
    throw std::invalid_argument("select_keypoints: fractions must be in (0, 1]");
  const std::vector<int> candidates = prefilter_candidates(scene, prefilter_fraction, seed);
  const int n = keypoint_count(fraction, static_cast<int>(candidates.size()));
  if (n > static_cast<int>(candidates.size()))
    throw std::invalid_argument("select_keypoints: scene too small for n >= 3 keypoints");

  std::vector<std::pair<double, int>> ranked;  // (-curvature, index)
  ranked.reserve(candidates.size());
  for (int idx : candidates) {
    const Neighborhood nb = neighborhood_stats(scene, idx, k_nn);
    ranked.emplace_back(-curvature(nb), idx);
  }
  std::sort(ranked.begin(), ranked.end());

  KeypointSet keys;
  keys.source = scene.role;
  keys.indices.reserve(n);
  keys.curvatures.reserve(n);
  for (int i = 0; i < n; ++i) {
    keys.indices.push_back(ranked[i].second);
    keys.curvatures.push_back(-ranked[i].first);
  }
  return keys;
}

KeypointSet select_keypoints_method(const Scene& scene, double fraction, int k_nn,
                                    double prefilter_fraction, std::uint64_t seed,
                                    KeypointMethod method) {
  if (method == KeypointMethod::Curvature)
    return select_keypoints(scene, fraction, k_nn, prefilter_fraction, seed);

  const std::vector<int> candidates = prefilter_candidates(scene, prefilter_fraction, seed);
  const int n = keypoint_count(fraction, static_cast<int>(candidates.size()));
  if (n > static_cast<int>(candidates.size()))
    throw std::invalid_argument("select_keypoints_method: scene too small");

  KeypointSet keys;
  keys.source = scene.role;
  if (method == KeypointMethod::Random) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<int> pool = candidates;
    for (int i = 0; i < n; ++i) {
      const int j = i + static_cast<int>(rng.uniform() * (pool.size() - i));
      std::swap(pool[i], pool[j]);
      keys.indices.push_back(pool[i]);
    }
  } else {  // farthest-point sampling seeded at the first candidate
    std::vector<double> dist(candidates.size(), std::numeric_limits<double>::infinity());
    int cur = 0;
    keys.indices.push_back(candidates[cur]);
    for (int pick = 1; pick < n; ++pick) {
      const Vec3& p = scene.points[candidates[cur]];
      int far_i = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        dist[i] = std::min(dist[i], norm2(scene.points[candidates[i]] - p));
        if (dist[i] > far_d) {
          far_d = dist[i];
          far_i = static_cast<int>(i);
        }
      }
      cur = far_i;
      keys.indices.push_back(candidates[cur]);
    }
  }
  keys.curvatures.assign(keys.indices.size(), 0.0);
  return keys;
}

KeypointSet correspond_keypoints(const KeypointSet& gt_keys, const Scene& gt,
                                 const Scene& completion) {
  if (completion.size() < 1) throw std::invalid_argument("correspond_keypoints: empty completion");
  KeypointSet out;
  out.source = completion.role;
  out.indices.reserve(gt_keys.indices.size());
  for (int idx : gt_keys.indices)
    out.indices.push_back(nearest_point(completion, gt.points[idx]));
  out.curvatures = gt_keys.curvatures;
  return out;
}

DistanceMatrix distance_matrix(const Scene& scene, const KeypointSet& keys) {
  const int n = keys.size();
  DistanceMatrix dm;
  dm.n = n;
  dm.d.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = norm(scene.points[keys.indices[i]] - scene.points[keys.indices[j]]);
      dm.d[static_cast<std::size_t>(i) * n + j] = d;
      dm.d[static_cast<std::size_t>(j) * n + i] = d;
    }
  }
  return dm;
}

}  // namespace scenediff
