#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scenediff/geometry.hpp"

namespace scenediff {

struct BoxSpec {
  Vec3 center{};  // center of the box footprint, z is the base height
  Vec3 size{};    // full extents along x, y, z
};

struct CylinderSpec {
  Vec3 base{};  // center of the bottom disk
  double radius = 0.0;
  double height = 0.0;
};

/// Desk-scale stand-in for an outdoor scene: a square ground patch with boxes
/// and cylinders on it, sampled at a fixed surface density. The scan is the
/// ground truth thinned by directional object shadowing, optional azimuth
/// binning, and a keep-fraction coin flip.
struct SceneSpec {
  std::uint64_t seed = 0;
  double ground_extent = 10.0;  // square side length, centered at the origin
  std::vector<BoxSpec> boxes;
  std::vector<CylinderSpec> cylinders;
  double density = 20.0;       // points per m^2 of surface
  double keep_fraction = 0.1;  // in (0, 1]
  /// Orthographic shadow directions; a point behind any object along one of
  /// these is dropped from the scan. Empty = no occlusion.
  std::vector<Vec3> occlusion_directions;
  /// When > 0, scan points are binned by azimuth around the origin and each
  /// bin keeps at most bin_capacity points. 0 = off.
  int azimuth_bins = 0;
  int bin_capacity = 0;
};

struct ManifestRecord {
  std::string scan_file;
  std::string gt_file;
  std::uint64_t seed = 0;
  std::string split;  // "train" or "held-out"
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  void save(const std::filesystem::path& path) const;
  /// Validates that every referenced file exists (relative to the manifest's
  /// directory) and that no file appears under two splits.
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Samples the ground truth G on all surfaces and derives the scan P from it;
/// returns (G, P). P is always an ordered subset of G.
std::pair<Scene, Scene> generate_scene(const SceneSpec& spec);

/// Plain text, one "x y z" line per point, 17 significant digits.
void write_pointcloud(const Scene& scene, const std::filesystem::path& path);
Scene read_pointcloud(const std::filesystem::path& path);

/// Generates `count` scenes from `base`, writes the point clouds under `dir`
/// as <prefix>NNN_{scan,gt}.xyz, and returns the manifest records.
DatasetManifest generate_dataset(const SceneSpec& base, int count,
                                 const std::filesystem::path& dir, const std::string& split,
                                 const std::string& prefix);

/// Loads (scan, ground truth) pairs for one split, paths relative to base_dir.
std::vector<std::pair<Scene, Scene>> load_split(const DatasetManifest& manifest,
                                                const std::string& split,
                                                const std::filesystem::path& base_dir);

}  // namespace scenediff
