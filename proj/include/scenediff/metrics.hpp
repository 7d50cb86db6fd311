#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scenediff/geometry.hpp"

namespace scenediff {

/// Bird's-eye-view grid for the occupancy histograms behind jsd(). Points
/// outside the bounds clamp to the boundary cells.
struct GridConfig {
  int nx = 64;
  int ny = 64;
  double min_x = -12.0;
  double min_y = -12.0;
  double max_x = 12.0;
  double max_y = 12.0;
};

struct OccupancyHistogram {
  GridConfig grid;
  std::vector<double> mass;  // nx*ny row-major, sums to 1

  double cell(int ix, int iy) const { return mass[static_cast<std::size_t>(ix) * grid.ny + iy]; }
};

struct MetricConfig {
  GridConfig grid;
  int n_emd = 256;
  std::uint64_t seed = 0;
  std::vector<double> iou_resolutions = {0.5, 0.2, 0.1};
};

struct MetricReport {
  double cd = 0.0;   // m^2 scale, squared distances
  double jsd = 0.0;  // in [0, 1], base-2
  double emd = 0.0;  // meters, non-squared
  std::map<double, double> iou;  // resolution (m) -> IoU in [0, 1]
  double wall_time_s = 0.0;      // completion call, not the metrics

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

/// Two-sided mean min squared distance, summed.
double chamfer(const Scene& p, const Scene& q);

OccupancyHistogram occupancy_histogram(const Scene& scene, const GridConfig& grid);

/// Jensen-Shannon divergence between BEV occupancy histograms, base-2 logs.
double jsd(const Scene& a, const Scene& b, const GridConfig& grid);

/// Mean Euclidean cost of the exact optimal assignment between seeded
/// subsamples of the two scenes. Scenes larger than n_emd are subsampled
/// without replacement; when the two subsamples end up unequal the smaller is
/// padded with replacement. Subsample draws are seeded per scene content, so
/// the result is symmetric in the arguments.
double emd(const Scene& p, const Scene& q, int n_emd, std::uint64_t seed);

/// Occupied-voxel count at resolution r (floor(point/r) per axis).
std::size_t voxel_count(const Scene& scene, double r);

double voxel_iou(const Scene& a, const Scene& b, double r);

/// Fills cd/jsd/emd/iou; wall_time_s is left for the caller, who times the
/// completion call itself.
MetricReport evaluate(const Scene& completion, const Scene& gt, const MetricConfig& cfg);

/// Exact minimum-cost assignment on a dense n x n cost matrix; returns the
/// column matched to each row. Shortest augmenting paths with potentials.
std::vector<int> solve_assignment(const std::vector<double>& cost, int n);

}  // namespace scenediff
