#include "scenediff/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "scenediff/rng.hpp"

namespace scenediff {

namespace {

int surface_points(double area, double density) {
  return std::max(1, static_cast<int>(std::lround(area * density)));
}

void sample_ground(double extent, double density, Rng& rng, std::vector<Vec3>& out) {
  const int n = surface_points(extent * extent, density);
  for (int i = 0; i < n; ++i)
    out.push_back({(rng.uniform() - 0.5) * extent, (rng.uniform() - 0.5) * extent, 0.0});
}

void sample_box(const BoxSpec& b, double density, Rng& rng, std::vector<Vec3>& out) {
  const double sx = b.size[0], sy = b.size[1], sz = b.size[2];
  // top face plus the four sides; the bottom sits on the ground
  const double areas[5] = {sx * sy, sx * sz, sx * sz, sy * sz, sy * sz};
  double total = 0.0;
  for (double a : areas) total += a;
  if (total <= 0.0) throw std::invalid_argument("generate_scene: degenerate box");
  const int n = surface_points(total, density);
  for (int i = 0; i < n; ++i) {
    double pick = rng.uniform() * total;
    int face = 0;
    while (face < 4 && pick >= areas[face]) pick -= areas[face], ++face;
    const double u = rng.uniform(), v = rng.uniform();
    Vec3 p{};
    switch (face) {
      case 0: p = {(u - 0.5) * sx, (v - 0.5) * sy, sz}; break;
      case 1: p = {(u - 0.5) * sx, -0.5 * sy, v * sz}; break;
      case 2: p = {(u - 0.5) * sx, 0.5 * sy, v * sz}; break;
      case 3: p = {-0.5 * sx, (u - 0.5) * sy, v * sz}; break;
      default: p = {0.5 * sx, (u - 0.5) * sy, v * sz}; break;
    }
    out.push_back(p + b.center);
  }
}

void sample_cylinder(const CylinderSpec& c, double density, Rng& rng, std::vector<Vec3>& out) {
  const double lateral = 2.0 * std::numbers::pi * c.radius * c.height;
  const double top = std::numbers::pi * c.radius * c.radius;
  if (lateral + top <= 0.0) throw std::invalid_argument("generate_scene: degenerate cylinder");
  const int n = surface_points(lateral + top, density);
  for (int i = 0; i < n; ++i) {
    const double theta = rng.uniform() * 2.0 * std::numbers::pi;
    Vec3 p{};
    if (rng.uniform() * (lateral + top) < lateral) {
      p = {c.radius * std::cos(theta), c.radius * std::sin(theta), rng.uniform() * c.height};
    } else {
      const double r = c.radius * std::sqrt(rng.uniform());
      p = {r * std::cos(theta), r * std::sin(theta), c.height};
    }
    out.push_back(p + c.base);
  }
}

struct Shadow {
  Vec3 center{};
  double radius2 = 0.0;
};

bool occluded(const Vec3& p, const std::vector<Shadow>& shadows, const Vec3& dir) {
  for (const Shadow& s : shadows) {
    const Vec3 rel = p - s.center;
    const double t = dot(rel, dir);
    if (t <= 0.0) continue;
    if (norm2(rel) - t * t < s.radius2) return true;
  }
  return false;
}

}  // namespace

std::pair<Scene, Scene> generate_scene(const SceneSpec& spec) {
  if (spec.ground_extent <= 0.0 && spec.boxes.empty() && spec.cylinders.empty())
    throw std::invalid_argument("generate_scene: no ground and no objects");
  if (spec.density <= 0.0) throw std::invalid_argument("generate_scene: density must be positive");
  if (spec.keep_fraction <= 0.0 || spec.keep_fraction > 1.0)
    throw std::invalid_argument("generate_scene: keep_fraction must be in (0, 1]");

  Rng rng(spec.seed);
  Scene gt;
  gt.role = SceneRole::GroundTruth;
  if (spec.ground_extent > 0.0) sample_ground(spec.ground_extent, spec.density, rng, gt.points);
  for (const BoxSpec& b : spec.boxes) sample_box(b, spec.density, rng, gt.points);
  for (const CylinderSpec& c : spec.cylinders) sample_cylinder(c, spec.density, rng, gt.points);

  std::vector<Shadow> shadows;
  for (const BoxSpec& b : spec.boxes) {
    Shadow s;
    s.center = b.center + Vec3{0.0, 0.0, 0.5 * b.size[2]};
    s.radius2 = 0.25 * norm2(b.size);
    shadows.push_back(s);
  }
  for (const CylinderSpec& c : spec.cylinders) {
    Shadow s;
    s.center = c.base + Vec3{0.0, 0.0, 0.5 * c.height};
    s.radius2 = c.radius * c.radius + 0.25 * c.height * c.height;
    shadows.push_back(s);
  }
  std::vector<Vec3> dirs;
  for (const Vec3& d : spec.occlusion_directions) {
    const double n = norm(d);
    if (n <= 0.0) throw std::invalid_argument("generate_scene: zero occlusion direction");
    dirs.push_back((1.0 / n) * d);
  }

  Scene scan;
  scan.role = SceneRole::Scan;
  Rng keep_rng(spec.seed ^ 0x2545f4914f6cdd1dull);
  std::vector<int> bin_fill(std::max(1, spec.azimuth_bins), 0);
  for (const Vec3& p : gt.points) {
    bool drop = false;
    for (const Vec3& d : dirs)
      if (occluded(p, shadows, d)) {
        drop = true;
        break;
      }
    if (!drop && spec.azimuth_bins > 0 && spec.bin_capacity > 0) {
      const double az = std::atan2(p[1], p[0]) + std::numbers::pi;
      int bin = static_cast<int>(az / (2.0 * std::numbers::pi) * spec.azimuth_bins);
      bin = std::min(bin, spec.azimuth_bins - 1);
      if (bin_fill[bin] >= spec.bin_capacity) drop = true;
      else ++bin_fill[bin];
    }
    // the coin flip always advances the stream so occlusion settings do not
    // reshuffle which surviving points are kept
    const bool keep = keep_rng.uniform() < spec.keep_fraction;
    if (!drop && keep) scan.points.push_back(p);
  }
  return {gt, scan};
}

void write_pointcloud(const Scene& scene, const std::filesystem::path& path) {
  if (scene.size() < 1) throw std::invalid_argument("write_pointcloud: empty scene");
  std::string out;
  out.reserve(scene.points.size() * 64);
  char buf[96];
  for (const Vec3& p : scene.points) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out += buf;
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("write_pointcloud: cannot open " + tmp);
    f << out;
  }
  std::filesystem::rename(tmp, path);
}

Scene read_pointcloud(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_pointcloud: cannot open " + path.string());
  Scene scene;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream iss(line);
    Vec3 p;
    std::string extra;
    if (!(iss >> p[0] >> p[1] >> p[2]) || (iss >> extra))
      throw std::runtime_error("read_pointcloud: parse error at " + path.string() + ":" +
                               std::to_string(lineno));
    scene.points.push_back(p);
  }
  if (scene.points.empty())
    throw std::runtime_error("read_pointcloud: no points in " + path.string());
  return scene;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (const ManifestRecord& r : records)
    j["records"].push_back(
        {{"scan", r.scan_file}, {"gt", r.gt_file}, {"seed", r.seed}, {"split", r.split}});
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("manifest save: cannot open " + tmp);
    f << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest load: cannot open " + path.string());
  nlohmann::json j;
  f >> j;
  DatasetManifest m;
  std::map<std::string, std::string> split_of;
  const auto base = path.parent_path();
  for (const auto& rec : j.at("records")) {
    ManifestRecord r;
    r.scan_file = rec.at("scan").get<std::string>();
    r.gt_file = rec.at("gt").get<std::string>();
    r.seed = rec.at("seed").get<std::uint64_t>();
    r.split = rec.at("split").get<std::string>();
    for (const std::string& file : {r.scan_file, r.gt_file}) {
      if (!std::filesystem::exists(base / file))
        throw std::runtime_error("manifest load: missing file " + (base / file).string());
      const auto it = split_of.find(file);
      if (it != split_of.end() && it->second != r.split)
        throw std::runtime_error("manifest load: " + file + " appears in two splits");
      split_of[file] = r.split;
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest generate_dataset(const SceneSpec& base, int count,
                                 const std::filesystem::path& dir, const std::string& split,
                                 const std::string& prefix) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  for (int i = 0; i < count; ++i) {
    SceneSpec spec = base;
    spec.seed = base.seed + static_cast<std::uint64_t>(i);
    const auto [gt, scan] = generate_scene(spec);
    char num[16];
    std::snprintf(num, sizeof(num), "%03d", i);
    ManifestRecord r;
    r.scan_file = prefix + num + "_scan.xyz";
    r.gt_file = prefix + num + "_gt.xyz";
    r.seed = spec.seed;
    r.split = split;
    write_pointcloud(scan, dir / r.scan_file);
    write_pointcloud(gt, dir / r.gt_file);
    m.records.push_back(std::move(r));
  }
  return m;
}

std::vector<std::pair<Scene, Scene>> load_split(const DatasetManifest& manifest,
                                                const std::string& split,
                                                const std::filesystem::path& base_dir) {
  std::vector<std::pair<Scene, Scene>> out;
  for (const ManifestRecord& r : manifest.records) {
    if (r.split != split) continue;
    Scene scan = read_pointcloud(base_dir / r.scan_file);
    scan.role = SceneRole::Scan;
    Scene gt = read_pointcloud(base_dir / r.gt_file);
    gt.role = SceneRole::GroundTruth;
    out.emplace_back(std::move(scan), std::move(gt));
  }
  return out;
}

}  // namespace scenediff
