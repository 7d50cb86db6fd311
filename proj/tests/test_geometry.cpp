#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "scenediff/geometry.hpp"
#include "test_util.hpp"

using namespace scenediff;
using namespace testutil;

namespace {

Scene collinear4() {
  Scene s;
  s.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  return s;
}

/// Flat grid plus tight non-coplanar clusters at the corners of a cube.
struct CornerScene {
  Scene scene;
  std::set<int> cluster_indices;
};

CornerScene corner_scene() {
  CornerScene cs;
  Rng rng(7);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      cs.scene.points.push_back({i * 0.5 - 2.25, j * 0.5 - 2.25, 0.0});
  const double half = 2.0;
  for (int cx : {-1, 1})
    for (int cy : {-1, 1})
      for (int cz : {1, 2}) {
        const Vec3 c{cx * half, cy * half, cz * half};
        // 5 points spread in all three directions so lambda_1 > 0
        const Vec3 spread[5] = {{0.1, 0, 0}, {-0.1, 0.02, 0}, {0, 0.1, 0.03},
                                {0, -0.1, 0.05}, {0.02, 0.03, -0.1}};
        for (const Vec3& d : spread) {
          cs.cluster_indices.insert(cs.scene.size());
          const Vec3 jit{rng.uniform() * 0.01, rng.uniform() * 0.01, rng.uniform() * 0.01};
          cs.scene.points.push_back(c + d + jit);
        }
      }
  return cs;
}

}  // namespace

TEST_CASE("knn on collinear points") {
  const Scene s = collinear4();
  CHECK(knn(s, 0, 2) == std::vector<int>{1, 2});
}

TEST_CASE("knn picks a duplicate point at distance zero") {
  Scene s = collinear4();
  s.points.push_back(s.points[1]);
  CHECK(knn(s, 1, 1) == std::vector<int>{4});
  CHECK(knn(s, 4, 1) == std::vector<int>{1});
}

TEST_CASE("knn matches the exhaustive sort oracle") {
  Rng rng(11);
  const Scene s = random_scene(rng, 50);
  for (int q = 0; q < s.size(); ++q) CHECK(knn(s, q, 5) == knn_oracle(s, q, 5));
}

TEST_CASE("knn oracle property on random scenes up to 500 points") {
  Rng rng(12);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 10 + rng.uniform_int(0, 490);
    const Scene s = random_scene(rng, n);
    for (int rep = 0; rep < 5; ++rep) {
      const int q = rng.uniform_int(0, n - 1);
      const int k = rng.uniform_int(1, std::min(n - 1, 12));
      CHECK(knn(s, q, k) == knn_oracle(s, q, k));
    }
  }
}

TEST_CASE("knn rejects out-of-range arguments") {
  const Scene s = collinear4();
  CHECK_THROWS_AS(knn(s, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(knn(s, 0, 4), std::invalid_argument);
  CHECK_THROWS_AS(knn(s, -1, 1), std::invalid_argument);
  CHECK_THROWS_AS(knn(s, 4, 1), std::invalid_argument);
}

TEST_CASE("neighborhood of the isotropic hexahedron") {
  Scene s;
  s.points = {{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  const Neighborhood nb = neighborhood_stats(s, 0, 6);
  for (int c = 0; c < 3; ++c) CHECK(nb.centroid[c] == doctest::Approx(0.0).epsilon(1e-12));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(nb.covariance[r * 3 + c] ==
            doctest::Approx(r == c ? 1.0 / 3.0 : 0.0).epsilon(1e-12));
  for (double l : nb.eigenvalues) CHECK(l == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("coplanar neighborhood has a zero smallest eigenvalue") {
  Rng rng(3);
  Scene s;
  s.points.push_back({0, 0, 0});
  for (int i = 0; i < 8; ++i)
    s.points.push_back({rng.uniform() * 2 - 1, rng.uniform() * 2 - 1, 0.0});
  const Neighborhood nb = neighborhood_stats(s, 0, 8);
  CHECK(nb.eigenvalues[0] == 0.0);
  CHECK(nb.eigenvalues[2] > 0.0);
}

TEST_CASE("eigenvalues match the cubic-root oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    // random symmetric PSD matrix A^T A
    std::array<double, 9> a{};
    for (double& v : a) v = rng.normal();
    std::array<double, 9> m{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) m[i * 3 + j] += a[k * 3 + i] * a[k * 3 + j];
    const auto got = symmetric_eigenvalues(m);
    const auto want = eigen_oracle(m);
    for (int i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-8));
  }
}

TEST_CASE("eigenvalues are rigid-motion invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Scene s = random_scene(rng, 40);
    const Scene s2 = transformed(s, random_rigid_motion(rng));
    const Neighborhood a = neighborhood_stats(s, 3, 10);
    const Neighborhood b = neighborhood_stats(s2, 3, 10);
    for (int i = 0; i < 3; ++i)
      CHECK(a.eigenvalues[i] == doctest::Approx(b.eigenvalues[i]).epsilon(1e-8));
  }
}

TEST_CASE("curvature formula and range") {
  Neighborhood nb;
  nb.eigenvalues = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  CHECK(curvature(nb) == doctest::Approx(1.0 / 3.0));
  nb.eigenvalues = {0.0, 0.7, 1.3};
  CHECK(curvature(nb) == 0.0);
  nb.eigenvalues = {1.0, 2.0, 5.0};
  CHECK(curvature(nb) == doctest::Approx(0.125));
  nb.eigenvalues = {0.0, 0.0, 0.0};
  CHECK(curvature(nb) == 0.0);

  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Scene s = random_scene(rng, 30);
    const double k = curvature(neighborhood_stats(s, trial % s.size(), 8));
    CHECK(k >= 0.0);
    CHECK(k <= 1.0 / 3.0 + 1e-15);
  }
}

TEST_CASE("keypoints land on the corner clusters, matching the exhaustive oracle") {
  const CornerScene cs = corner_scene();
  const int count = cs.scene.size();
  const double fraction = 8.5 / count;  // n = floor(fraction * count) = 8
  const KeypointSet keys = select_keypoints(cs.scene, fraction, 4, 1.0, 0);
  REQUIRE(keys.size() == 8);
  for (int idx : keys.indices) CHECK(cs.cluster_indices.count(idx) == 1);

  // oracle: full curvature ranking of every point
  std::vector<std::pair<double, int>> ranked;
  for (int i = 0; i < count; ++i)
    ranked.emplace_back(-curvature(neighborhood_stats(cs.scene, i, 4)), i);
  std::sort(ranked.begin(), ranked.end());
  for (int i = 0; i < 8; ++i) CHECK(keys.indices[i] == ranked[i].second);
  for (std::size_t i = 1; i < keys.curvatures.size(); ++i)
    CHECK(keys.curvatures[i] <= keys.curvatures[i - 1]);
}

TEST_CASE("fraction one with no prefilter selects every index") {
  Rng rng(8);
  const Scene s = random_scene(rng, 20);
  const KeypointSet keys = select_keypoints(s, 1.0, 5, 1.0, 0);
  REQUIRE(keys.size() == 20);
  std::set<int> got(keys.indices.begin(), keys.indices.end());
  CHECK(got.size() == 20);
}

TEST_CASE("keypoint selection is rigid-motion invariant with full prefilter") {
  Rng rng(9);
  const Scene s = random_scene(rng, 60);
  const Scene s2 = transformed(s, random_rigid_motion(rng));
  const KeypointSet a = select_keypoints(s, 0.2, 8, 1.0, 0);
  const KeypointSet b = select_keypoints(s2, 0.2, 8, 1.0, 0);
  std::set<int> sa(a.indices.begin(), a.indices.end());
  std::set<int> sb(b.indices.begin(), b.indices.end());
  CHECK(sa == sb);
}

TEST_CASE("selection validates fractions and scene size") {
  Rng rng(10);
  const Scene tiny = random_scene(rng, 4);
  CHECK_THROWS_AS(select_keypoints(tiny, 0.5, 2, 0.25, 0), std::invalid_argument);
  CHECK_THROWS_AS(select_keypoints(tiny, 0.0, 2, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(select_keypoints(tiny, 0.5, 2, 1.5, 0), std::invalid_argument);
}

TEST_CASE("baseline selection methods return valid unique sets") {
  Rng rng(13);
  const Scene s = random_scene(rng, 100);
  for (const KeypointMethod m : {KeypointMethod::Random, KeypointMethod::Farthest}) {
    const KeypointSet keys = select_keypoints_method(s, 0.1, 6, 1.0, 42, m);
    REQUIRE(keys.size() == 10);
    std::set<int> uniq(keys.indices.begin(), keys.indices.end());
    CHECK(uniq.size() == keys.indices.size());
    for (int idx : keys.indices) {
      CHECK(idx >= 0);
      CHECK(idx < s.size());
    }
  }
}

TEST_CASE("correspondence is the identity on the same scene") {
  Rng rng(14);
  const Scene s = random_scene(rng, 50);
  const KeypointSet keys = select_keypoints(s, 0.2, 6, 1.0, 0);
  const KeypointSet corr = correspond_keypoints(keys, s, s);
  CHECK(corr.indices == keys.indices);
}

TEST_CASE("correspondence is preserved under a uniform translation") {
  Rng rng(15);
  const Scene s = random_scene(rng, 50);
  Scene shifted = s;
  for (Vec3& p : shifted.points) p = p + Vec3{0.3, -0.2, 0.1};
  const KeypointSet keys = select_keypoints(s, 0.2, 6, 1.0, 0);
  const KeypointSet corr = correspond_keypoints(keys, s, shifted);
  CHECK(corr.indices == keys.indices);
}

TEST_CASE("correspondence matches the brute-force nearest-neighbor oracle") {
  Rng rng(16);
  const Scene gt = random_scene(rng, 60);
  const Scene completion = random_scene(rng, 45);
  const KeypointSet keys = select_keypoints(gt, 0.25, 6, 1.0, 0);
  const KeypointSet corr = correspond_keypoints(keys, gt, completion);
  for (std::size_t i = 0; i < keys.indices.size(); ++i) {
    const Vec3& q = gt.points[keys.indices[i]];
    int best = 0;
    for (int j = 1; j < completion.size(); ++j)
      if (norm2(completion.points[j] - q) < norm2(completion.points[best] - q)) best = j;
    CHECK(corr.indices[i] == best);
  }
}

TEST_CASE("distance matrix of the 3-4-5 triangle") {
  Scene s;
  s.points = {{0, 0, 0}, {3, 0, 0}, {0, 4, 0}};
  KeypointSet keys;
  keys.indices = {0, 1, 2};
  keys.curvatures = {0, 0, 0};
  const DistanceMatrix d = distance_matrix(s, keys);
  CHECK(d(0, 1) == doctest::Approx(3.0));
  CHECK(d(0, 2) == doctest::Approx(4.0));
  CHECK(d(1, 2) == doctest::Approx(5.0));
  for (int i = 0; i < 3; ++i) CHECK(d(i, i) == 0.0);
}

TEST_CASE("distance matrix symmetry, triangle inequality, rigid invariance") {
  Rng rng(17);
  const Scene s = random_scene(rng, 40);
  const KeypointSet keys = select_keypoints(s, 0.3, 6, 1.0, 0);
  const DistanceMatrix d = distance_matrix(s, keys);
  const DistanceMatrix d2 = distance_matrix(transformed(s, random_rigid_motion(rng)), keys);
  const int n = d.n;
  for (int i = 0; i < n; ++i) {
    CHECK(d(i, i) == 0.0);
    for (int j = 0; j < n; ++j) {
      CHECK(d(i, j) == d(j, i));
      CHECK(d(i, j) >= 0.0);
      CHECK(d(i, j) == doctest::Approx(d2(i, j)).epsilon(1e-9));
      for (int k = 0; k < n; ++k) CHECK(d(i, j) <= d(i, k) + d(k, j) + 1e-9);
    }
  }
}

TEST_CASE("nearest_point breaks ties toward the smaller index") {
  Scene s;
  s.points = {{1, 0, 0}, {-1, 0, 0}, {1, 0, 0}};
  CHECK(nearest_point(s, {0.9, 0, 0}) == 0);
  CHECK(nearest_point(s, {0, 0, 0}) == 0);
}
