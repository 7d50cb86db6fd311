#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace scenediff {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }

enum class SceneRole { Scan, GroundTruth, Completion, Noisy };

/// An ordered point set. Point order is stable: indices carry identity for
/// correspondences between scenes.
struct Scene {
  std::vector<Vec3> points;
  SceneRole role = SceneRole::GroundTruth;

  int size() const { return static_cast<int>(points.size()); }
};

/// K-nearest-neighbor statistics around one point.
struct Neighborhood {
  int center = -1;
  std::vector<int> members;        // exactly k_nn indices, query excluded
  Vec3 centroid{};
  std::array<double, 9> covariance{};   // row-major 3x3, population divisor
  std::array<double, 3> eigenvalues{};  // ascending, clamped at zero
};

/// Indices of high-curvature points, curvatures sorted non-increasing.
struct KeypointSet {
  SceneRole source = SceneRole::GroundTruth;
  std::vector<int> indices;
  std::vector<double> curvatures;

  int size() const { return static_cast<int>(indices.size()); }
};

enum class KeypointMethod { Curvature, Random, Farthest };

struct DistanceMatrix {
  int n = 0;
  std::vector<double> d;  // n*n row-major, meters (non-squared)

  double operator()(int i, int j) const { return d[static_cast<std::size_t>(i) * n + j]; }
};

/// Index of the point in `scene` closest to `q`; ties break to the smaller index.
int nearest_point(const Scene& scene, const Vec3& q);

/// The k_nn indices nearest to the query point, query excluded, sorted by
/// (distance, index). Throws std::invalid_argument when k_nn is out of range.
std::vector<int> knn(const Scene& scene, int query, int k_nn);

Neighborhood neighborhood_stats(const Scene& scene, int center, int k_nn);

/// Eigenvalues of a symmetric 3x3 matrix (row-major), ascending.
std::array<double, 3> symmetric_eigenvalues(const std::array<double, 9>& m);

/// kappa = lambda1 / (lambda1 + lambda2 + lambda3), in [0, 1/3].
/// A zero-variance neighborhood returns 0 by convention.
double curvature(const Neighborhood& nb);

/// Draws a seeded uniform prefilter subset, ranks it by curvature, and keeps
/// the top n = max(3, floor(fraction * candidate_count)). With
/// prefilter_fraction == 1.0 the selection is deterministic.
KeypointSet select_keypoints(const Scene& scene, double fraction, int k_nn,
                             double prefilter_fraction, std::uint64_t seed);

/// Baseline selection methods for benchmarking only (random / farthest-point).
KeypointSet select_keypoints_method(const Scene& scene, double fraction, int k_nn,
                                    double prefilter_fraction, std::uint64_t seed,
                                    KeypointMethod method);

/// For each ground-truth keypoint, the nearest completion point. Returned
/// indices may repeat.
KeypointSet correspond_keypoints(const KeypointSet& gt_keys, const Scene& gt,
                                 const Scene& completion);

DistanceMatrix distance_matrix(const Scene& scene, const KeypointSet& keys);

}  // namespace scenediff
