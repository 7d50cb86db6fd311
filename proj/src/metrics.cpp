#include "scenediff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

#include "scenediff/rng.hpp"

namespace scenediff {

double chamfer(const Scene& p, const Scene& q) {
  if (p.size() < 1 || q.size() < 1) throw std::invalid_argument("chamfer: empty scene");
  auto one_sided = [](const Scene& a, const Scene& b) {
    double s = 0.0;
    for (const Vec3& pa : a.points) {
      double best = norm2(pa - b.points[0]);
      for (int j = 1; j < b.size(); ++j) best = std::min(best, norm2(pa - b.points[j]));
      s += best;
    }
    return s / a.size();
  };
  return one_sided(p, q) + one_sided(q, p);
}

OccupancyHistogram occupancy_histogram(const Scene& scene, const GridConfig& grid) {
  if (scene.size() < 1) throw std::invalid_argument("occupancy_histogram: empty scene");
  if (grid.nx < 1 || grid.ny < 1 || grid.max_x <= grid.min_x || grid.max_y <= grid.min_y)
    throw std::invalid_argument("occupancy_histogram: degenerate grid");
  OccupancyHistogram h;
  h.grid = grid;
  h.mass.assign(static_cast<std::size_t>(grid.nx) * grid.ny, 0.0);
  const double sx = grid.nx / (grid.max_x - grid.min_x);
  const double sy = grid.ny / (grid.max_y - grid.min_y);
  for (const Vec3& p : scene.points) {
    int ix = static_cast<int>(std::floor((p[0] - grid.min_x) * sx));
    int iy = static_cast<int>(std::floor((p[1] - grid.min_y) * sy));
    ix = std::clamp(ix, 0, grid.nx - 1);
    iy = std::clamp(iy, 0, grid.ny - 1);
    h.mass[static_cast<std::size_t>(ix) * grid.ny + iy] += 1.0;
  }
  for (double& m : h.mass) m /= scene.size();
  return h;
}

double jsd(const Scene& a, const Scene& b, const GridConfig& grid) {
  const OccupancyHistogram ha = occupancy_histogram(a, grid);
  const OccupancyHistogram hb = occupancy_histogram(b, grid);
  double out = 0.0;
  for (std::size_t i = 0; i < ha.mass.size(); ++i) {
    const double pa = ha.mass[i];
    const double pb = hb.mass[i];
    const double m = 0.5 * (pa + pb);
    if (pa > 0.0) out += 0.5 * pa * std::log2(pa / m);
    if (pb > 0.0) out += 0.5 * pb * std::log2(pb / m);
  }
  return std::clamp(out, 0.0, 1.0);
}

std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  if (n < 1 || static_cast<int>(cost.size()) != n * n)
    throw std::invalid_argument("solve_assignment: bad cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-indexed potentials; p[j] is the row assigned to column j, column 0 is
  // the virtual start of each augmenting path.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(n, -1);
  for (int j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  return match;
}

namespace {

std::uint64_t scene_hash(const Scene& scene) {
  std::uint64_t h = 14695981039346656037ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(scene.points.data());
  for (std::size_t i = 0; i < scene.points.size() * sizeof(Vec3); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<Vec3> emd_subsample(const Scene& scene, int n_emd, std::uint64_t seed) {
  Rng rng(seed ^ scene_hash(scene));
  if (scene.size() <= n_emd) return scene.points;
  std::vector<int> idx(scene.points.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (int i = 0; i < n_emd; ++i)
    std::swap(idx[i], idx[rng.uniform_int(i, static_cast<int>(idx.size()) - 1)]);
  std::vector<Vec3> out(n_emd);
  for (int i = 0; i < n_emd; ++i) out[i] = scene.points[idx[i]];
  return out;
}

void pad_with_replacement(std::vector<Vec3>& pts, std::size_t target, const Scene& scene,
                          std::uint64_t seed) {
  Rng rng(seed ^ scene_hash(scene) ^ 0x9e3779b97f4a7c15ull);
  while (pts.size() < target)
    pts.push_back(scene.points[rng.uniform_int(0, scene.size() - 1)]);
}

}  // namespace

double emd(const Scene& p, const Scene& q, int n_emd, std::uint64_t seed) {
  if (p.size() < 1 || q.size() < 1) throw std::invalid_argument("emd: empty scene");
  if (n_emd < 1) throw std::invalid_argument("emd: n_emd must be >= 1");
  // canonical argument order makes the whole computation, rounding included,
  // identical for emd(p, q) and emd(q, p)
  if (scene_hash(q) < scene_hash(p)) return emd(q, p, n_emd, seed);
  std::vector<Vec3> a = emd_subsample(p, n_emd, seed);
  std::vector<Vec3> b = emd_subsample(q, n_emd, seed);
  if (a.size() < b.size()) pad_with_replacement(a, b.size(), p, seed);
  if (b.size() < a.size()) pad_with_replacement(b, a.size(), q, seed);
  const int n = static_cast<int>(a.size());
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost[static_cast<std::size_t>(i) * n + j] = norm(a[i] - b[j]);
  const std::vector<int> match = solve_assignment(cost, n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost[static_cast<std::size_t>(i) * n + match[i]];
  return total / n;
}

namespace {

std::set<std::tuple<long long, long long, long long>> voxelize(const Scene& scene, double r) {
  std::set<std::tuple<long long, long long, long long>> occ;
  for (const Vec3& p : scene.points)
    occ.emplace(static_cast<long long>(std::floor(p[0] / r)),
                static_cast<long long>(std::floor(p[1] / r)),
                static_cast<long long>(std::floor(p[2] / r)));
  return occ;
}

}  // namespace

std::size_t voxel_count(const Scene& scene, double r) {
  if (r <= 0.0) throw std::invalid_argument("voxel_count: resolution must be positive");
  return voxelize(scene, r).size();
}

double voxel_iou(const Scene& a, const Scene& b, double r) {
  if (r <= 0.0) throw std::invalid_argument("voxel_iou: resolution must be positive");
  const auto va = voxelize(a, r);
  const auto vb = voxelize(b, r);
  std::size_t inter = 0;
  for (const auto& v : va) inter += vb.count(v);
  const std::size_t uni = va.size() + vb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

MetricReport evaluate(const Scene& completion, const Scene& gt, const MetricConfig& cfg) {
  MetricReport rep;
  rep.cd = chamfer(completion, gt);
  rep.jsd = jsd(completion, gt, cfg.grid);
  rep.emd = emd(completion, gt, cfg.n_emd, cfg.seed);
  for (double r : cfg.iou_resolutions) rep.iou[r] = voxel_iou(completion, gt, r);
  return rep;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["cd"] = cd;
  j["jsd"] = jsd;
  j["emd"] = emd;
  j["wall_time_s"] = wall_time_s;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [r, v] : iou) arr.push_back({r, v});
  j["iou"] = arr;
  return j.dump();
}

MetricReport MetricReport::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  MetricReport rep;
  rep.cd = j.at("cd").get<double>();
  rep.jsd = j.at("jsd").get<double>();
  rep.emd = j.at("emd").get<double>();
  rep.wall_time_s = j.at("wall_time_s").get<double>();
  for (const auto& pair : j.at("iou"))
    rep.iou[pair.at(0).get<double>()] = pair.at(1).get<double>();
  return rep;
}

}  // namespace scenediff
