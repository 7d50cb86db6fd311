#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scenediff/diffusion.hpp"
#include "scenediff/distill.hpp"
#include "scenediff/metrics.hpp"
#include "scenediff/synth.hpp"

namespace scenediff {

struct DataConfig {
  /// Optional pre-built manifest (path relative to the config file). When
  /// empty, scenes are generated under the output directory.
  std::string manifest;
  int train_scenes = 8;
  int heldout_scenes = 20;
  double ground_extent = 10.0;
  double density = 16.0;
  double keep_fraction = 0.1;
  int min_objects = 2;
  int max_objects = 4;
};

struct TeacherConfig {
  int epochs = 250;
  double lr = 0.05;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";
  int threads = 1;
  int schedule_T = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  NetDescriptor net;
  DataConfig data;
  TeacherConfig teacher;
  DistillConfig distill;
  std::vector<int> sampler_steps = {50, 8, 4, 2, 1};
  MetricConfig metrics;

  /// Parses the JSON config; unknown keys are rejected. Relative paths are
  /// resolved against the config file's directory. SCENEDIFF_OUT_DIR and
  /// SCENEDIFF_THREADS environment variables override the corresponding
  /// fields, as do "key=value" override strings (dotted keys, e.g.
  /// "distill.lambda_scene=0").
  static ExperimentConfig load(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides = {});
  static ExperimentConfig defaults();

  void apply_override(const std::string& key_value);

  /// FNV-1a over the canonical serialized form; stamped on every table row.
  std::uint64_t config_hash() const;
  std::string dump() const;
};

struct BenchmarkRow {
  std::string method;  // e.g. "teacher@50", "student@8"
  int steps = 0;
  MetricReport report;  // means over held-out scenes; wall_time_s is the median
  std::uint64_t config_hash = 0;
};

std::string format_table(const std::vector<BenchmarkRow>& rows);
void write_table(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& path);

/// Builds one randomized scene spec (boxes and cylinders on a ground patch).
SceneSpec make_scene_spec(const DataConfig& data, std::uint64_t seed);

/// Generates (or loads) the train and held-out splits.
struct PipelineData {
  std::vector<std::pair<Scene, Scene>> train;    // (scan, gt)
  std::vector<std::pair<Scene, Scene>> heldout;  // (scan, gt)
};
PipelineData prepare_data(const ExperimentConfig& cfg);

/// Completion + metrics for one model/sampler over the held-out split;
/// parallel across scenes, deterministic aggregation.
BenchmarkRow evaluate_method(const DenoiserModel& model, const std::string& method, int steps,
                             const std::vector<std::pair<Scene, Scene>>& heldout,
                             const NoiseSchedule& sched, const ExperimentConfig& cfg);

/// Full teacher -> distill -> evaluate run. Writes checkpoints, per-method
/// reports, and benchmark.csv under out_dir; returns out_dir. Partial
/// artifacts are kept on failure (errors propagate).
std::filesystem::path run_pipeline(const ExperimentConfig& cfg);

/// One of: no-structural, no-scene, no-point, weights, keypoint-count,
/// selection-method. Each variant is a config delta; all variants share the
/// teacher and the data.
std::vector<BenchmarkRow> run_ablation(const ExperimentConfig& cfg, const std::string& name);

}  // namespace scenediff
