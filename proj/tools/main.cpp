#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenediff/trainer.hpp"

using namespace scenediff;

namespace {

struct GlobalOpts {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t seed = -1;
  int steps = 0;
  int threads = 0;
};

void add_common(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config, "Experiment config file (JSON)");
  cmd->add_option("--set", g.sets, "Config override key=value (repeatable)");
  cmd->add_option("--out", g.out, "Output directory override");
  cmd->add_option("--seed", g.seed, "Global seed override");
  cmd->add_option("--threads", g.threads, "Worker thread cap");
}

ExperimentConfig resolve_config(const GlobalOpts& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig::defaults()
                                          : ExperimentConfig::load(g.config, {});
  if (g.config.empty()) {
    if (const char* env = std::getenv("SCENEDIFF_OUT_DIR")) cfg.out_dir = env;
    if (const char* env = std::getenv("SCENEDIFF_THREADS")) cfg.threads = std::atoi(env);
  }
  for (const std::string& s : g.sets) cfg.apply_override(s);
  if (!g.out.empty()) cfg.out_dir = g.out;
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  if (g.threads > 0) cfg.threads = g.threads;
  return cfg;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + tmp);
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  const auto dir = cfg.out_dir / "data";
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  auto emit = [&](int count, std::uint64_t seed0, const std::string& split,
                  const std::string& prefix) {
    for (int i = 0; i < count; ++i) {
      const auto [gt, scan] = generate_scene(make_scene_spec(cfg.data, seed0 + i));
      char num[16];
      std::snprintf(num, sizeof(num), "%03d", i);
      ManifestRecord r{prefix + num + "_scan.xyz", prefix + num + "_gt.xyz", seed0 + i, split};
      write_pointcloud(scan, dir / r.scan_file);
      write_pointcloud(gt, dir / r.gt_file);
      manifest.records.push_back(std::move(r));
    }
  };
  emit(cfg.data.train_scenes, cfg.seed, "train", "train");
  emit(cfg.data.heldout_scenes, cfg.seed + 100000, "held-out", "heldout");
  manifest.save(dir / "manifest.json");
  std::cout << "wrote " << manifest.records.size() << " scene pairs under " << dir.string()
            << "\n";
  return 0;
}

int cmd_train_teacher(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  const NoiseSchedule sched = build_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
  const PipelineData data = prepare_data(cfg);
  std::vector<double> losses;
  const DenoiserModel teacher = train_teacher(data.train, cfg.teacher.epochs, sched, cfg.net,
                                              cfg.teacher.lr, cfg.seed, &losses);
  teacher.save(cfg.out_dir / "teacher.ckpt");
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) csv << i << "," << losses[i] << "\n";
  write_text_file(cfg.out_dir / "teacher_loss.csv", csv.str());
  std::cout << "teacher saved to " << (cfg.out_dir / "teacher.ckpt").string() << " after "
            << losses.size() << " steps\n";
  return 0;
}

int cmd_distill(const ExperimentConfig& cfg, const std::string& teacher_path) {
  std::filesystem::create_directories(cfg.out_dir);
  const auto path = teacher_path.empty() ? cfg.out_dir / "teacher.ckpt"
                                         : std::filesystem::path(teacher_path);
  const DenoiserModel teacher = DenoiserModel::load(path);
  const NoiseSchedule sched = build_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
  const PipelineData data = prepare_data(cfg);
  DistillConfig dc = cfg.distill;
  dc.seed = cfg.seed;
  dc.loss_log_path = (cfg.out_dir / "distill_log.jsonl").string();
  const DistillResult res = distill(teacher, data.train, sched, dc);
  res.student.save(cfg.out_dir / "student.ckpt");
  res.auxiliary.save(cfg.out_dir / "auxiliary.ckpt");
  std::cout << "student saved to " << (cfg.out_dir / "student.ckpt").string() << "\n";
  return 0;
}

int cmd_complete(const ExperimentConfig& cfg, const std::string& model_path,
                 const std::string& scan_path, const std::string& gt_path,
                 const std::string& out_path, int steps) {
  const DenoiserModel model = DenoiserModel::load(model_path);
  Scene scan = read_pointcloud(scan_path);
  scan.role = SceneRole::Scan;
  const NoiseSchedule sched = build_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);

  const auto t0 = std::chrono::steady_clock::now();
  Scene completion;
  if (steps == 1) {
    completion = sample_onestep(model, scan, sched, cfg.distill.k_dup, cfg.seed,
                                cfg.distill.offset_consistent_inversion);
  } else {
    SamplerConfig sc = SamplerConfig::even(steps, sched.T, cfg.distill.k_dup);
    sc.offset_consistent_inversion = cfg.distill.offset_consistent_inversion;
    completion = (model.role == ModelRole::Teacher)
                     ? sample_multistep(model, scan, sched, sc, cfg.seed)
                     : sample_fewstep(model, scan, sched, sc, cfg.seed);
  }
  const auto t1 = std::chrono::steady_clock::now();
  write_pointcloud(completion, out_path);
  std::cout << "completion (" << completion.size() << " points) written to " << out_path << "\n";
  if (!gt_path.empty()) {
    Scene gt = read_pointcloud(gt_path);
    MetricConfig mc = cfg.metrics;
    mc.seed = cfg.seed;
    MetricReport rep = evaluate(completion, gt, mc);
    rep.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    write_text_file(out_path + ".report.json", rep.to_json() + "\n");
    std::cout << rep.to_json() << "\n";
  }
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& completion_path,
             const std::string& gt_path) {
  const Scene completion = read_pointcloud(completion_path);
  const Scene gt = read_pointcloud(gt_path);
  MetricConfig mc = cfg.metrics;
  mc.seed = cfg.seed;
  const MetricReport rep = evaluate(completion, gt, mc);
  std::cout << rep.to_json() << "\n";
  return 0;
}

int cmd_export_plots(const ExperimentConfig& cfg, const std::string& completion_path,
                     const std::string& gt_path) {
  std::filesystem::create_directories(cfg.out_dir);
  bool wrote = false;

  const auto bench = cfg.out_dir / "benchmark.csv";
  if (std::filesystem::exists(bench)) {
    std::ifstream f(bench);
    std::string header, line;
    std::getline(f, header);
    std::ostringstream out;
    out << "method,time_s,cd\n";
    while (std::getline(f, line)) {
      std::istringstream iss(line);
      std::vector<std::string> cols;
      std::string col;
      while (std::getline(iss, col, ',')) cols.push_back(col);
      if (cols.size() < 4) continue;
      out << cols[0] << "," << cols[cols.size() - 2] << "," << cols[2] << "\n";
    }
    write_text_file(cfg.out_dir / "cd_vs_time.csv", out.str());
    wrote = true;
  }

  if (!completion_path.empty() && !gt_path.empty()) {
    const Scene completion = read_pointcloud(completion_path);
    const Scene gt = read_pointcloud(gt_path);

    // histogram of completion-to-GT nearest-neighbor distances
    std::vector<double> dists;
    dists.reserve(completion.points.size());
    for (const Vec3& p : completion.points) {
      double best = norm2(p - gt.points[0]);
      for (int j = 1; j < gt.size(); ++j) best = std::min(best, norm2(p - gt.points[j]));
      dists.push_back(std::sqrt(best));
    }
    const double dmax = *std::max_element(dists.begin(), dists.end());
    const int bins = 32;
    std::vector<int> hist(bins, 0);
    for (double d : dists) {
      int b = dmax > 0.0 ? static_cast<int>(d / dmax * bins) : 0;
      ++hist[std::min(b, bins - 1)];
    }
    std::ostringstream hcsv;
    hcsv << "bin_lo,bin_hi,count\n";
    for (int b = 0; b < bins; ++b)
      hcsv << (b * dmax / bins) << "," << ((b + 1) * dmax / bins) << "," << hist[b] << "\n";
    write_text_file(cfg.out_dir / "nn_hist.csv", hcsv.str());

    // keypoint distance-matrix difference as a grayscale grid
    DistillConfig dc = cfg.distill;
    dc.seed = cfg.seed;
    dc.k_nn = std::min(dc.k_nn, gt.size() - 1);
    const KeypointSet keys = select_keypoints_method(gt, dc.keypoint_fraction, dc.k_nn,
                                                     dc.prefilter_fraction, dc.seed,
                                                     dc.keypoint_method);
    const DistanceMatrix dg = distance_matrix(gt, keys);
    const KeypointSet corr = correspond_keypoints(keys, gt, completion);
    const DistanceMatrix dcm = distance_matrix(completion, corr);
    double vmax = 0.0;
    std::vector<double> diff(dg.d.size());
    for (std::size_t i = 0; i < diff.size(); ++i) {
      diff[i] = std::abs(dg.d[i] - dcm.d[i]);
      vmax = std::max(vmax, diff[i]);
    }
    std::ostringstream pgm;
    pgm << "P2\n" << dg.n << " " << dg.n << "\n255\n";
    for (int i = 0; i < dg.n; ++i) {
      for (int j = 0; j < dg.n; ++j) {
        const double v = diff[static_cast<std::size_t>(i) * dg.n + j];
        pgm << (vmax > 0.0 ? static_cast<int>(v / vmax * 255.0) : 0)
            << (j + 1 == dg.n ? '\n' : ' ');
      }
    }
    write_text_file(cfg.out_dir / "dmat_diff.pgm", pgm.str());
    wrote = true;
  }

  if (!wrote)
    throw std::runtime_error(
        "export-plots: nothing to export (no benchmark.csv in out dir and no "
        "--completion/--gt pair given)");
  std::cout << "plot data written under " << cfg.out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenediff: few-step point-cloud scene completion via score distillation"};
  app.require_subcommand(1);

  GlobalOpts g;
  std::string teacher_path, model_path, scan_path, gt_path, completion_path, out_file;
  std::string ablation_name;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  add_common(gen, g);

  CLI::App* tt = app.add_subcommand("train-teacher", "Train the teacher denoiser");
  add_common(tt, g);

  CLI::App* di = app.add_subcommand("distill", "Distill a few-step student from a teacher");
  add_common(di, g);
  di->add_option("--teacher", teacher_path, "Teacher checkpoint (default: <out>/teacher.ckpt)");

  CLI::App* co = app.add_subcommand("complete", "Complete a scan with a trained model");
  add_common(co, g);
  co->add_option("--model", model_path, "Model checkpoint")->required();
  co->add_option("--scan", scan_path, "Input scan point cloud")->required();
  co->add_option("--gt", gt_path, "Optional ground truth for a metric report");
  co->add_option("--output", out_file, "Completion output file")->required();
  g.steps = 8;

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a completion against ground truth");
  add_common(ev, g);
  ev->add_option("--completion", completion_path, "Completion point cloud")->required();
  ev->add_option("--gt", gt_path, "Ground truth point cloud")->required();

  CLI::App* ab = app.add_subcommand("ablate", "Run one ablation family");
  add_common(ab, g);
  ab->add_option("--name", ablation_name, "Ablation name")->required();

  CLI::App* be = app.add_subcommand("bench", "Full pipeline: teacher, distill, benchmark table");
  add_common(be, g);

  CLI::App* ex = app.add_subcommand("export-plots", "Export CSV/PGM plot data");
  add_common(ex, g);
  ex->add_option("--completion", completion_path, "Completion point cloud");
  ex->add_option("--gt", gt_path, "Ground truth point cloud");

  co->add_option("--steps", g.steps, "Sampler step count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    const ExperimentConfig cfg = resolve_config(g);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (tt->parsed()) return cmd_train_teacher(cfg);
    if (di->parsed()) return cmd_distill(cfg, teacher_path);
    if (co->parsed()) return cmd_complete(cfg, model_path, scan_path, gt_path, out_file, g.steps);
    if (ev->parsed()) return cmd_eval(cfg, completion_path, gt_path);
    if (ab->parsed()) {
      const auto rows = run_ablation(cfg, ablation_name);
      std::cout << format_table(rows);
      return 0;
    }
    if (be->parsed()) {
      const auto dir = run_pipeline(cfg);
      std::ifstream f(dir / "benchmark.csv");
      std::cout << f.rdbuf();
      return 0;
    }
    if (ex->parsed()) return cmd_export_plots(cfg, completion_path, gt_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
